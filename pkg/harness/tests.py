import json
import math
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.contrib.auth import get_user_model
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase
from rest_framework.test import APIClient

from consistency.metrics import ConsistencyParams
from core.config import GenerationConfig
from core.exceptions import DenoiserError, DomainError, RunError, TaskError
from core.types import MaskedSequence, StepLedger, VocabSpec
from denoiser.denoisers import Denoiser, ExactMarkovDenoiser, PerturbedDenoiser
from denoiser.markov import MarkovSpec, viterbi
from engine.answers import Answer
from engine.dvoting import RunResult
from harness.cli import EXIT_CONFIG, EXIT_DENOISER, EXIT_TASK
from harness.methods import (
    OracleDenoiserFactory,
    QuestionOutcome,
    attach_comparisons,
    bpc,
    parse_sweep_value,
    run_method,
    sweep,
)
from harness.models import EvaluationRun, RunStatus
from harness.reports import emit_report
from harness.taskfile import TaskRecord, ingest_tasks, parse_task_records, synthesize_tasks
from harness.tasks import run_evaluation_task

VOCAB = 4
GEN_LEN = 8

# Last two generated tokens of the cycle 0 -> 1 -> 2 -> 3 -> 0 after each prompt token.
CYCLE_GOLD = {0: "30", 1: "1", 2: "12", 3: "23"}


def cycle_task(start):
    """Deterministic chain: every completion is the cycle continued from the prompt."""
    transition = [[1.0 if j == (i + 1) % VOCAB else 0.0 for j in range(VOCAB)] for i in range(VOCAB)]
    return {
        "id": f"cycle-{start}",
        "prompt": {"synthetic": {"transition": transition, "prompt": [start], "answer_width": 2, "gen_len": GEN_LEN}},
        "gold": CYCLE_GOLD[start],
        "answer_type": "numeric",
    }


CYCLE_TASKS = [cycle_task(start) for start in range(VOCAB)]


def cycle_config(**changes):
    return GenerationConfig(gen_len=GEN_LEN, block_size=4, **changes)


def wide_suite(questions):
    """Single-token answers over 100 ids; the noisy oracle names the right one with probability 0.703."""
    vocab = 100
    transition = np.zeros((vocab, vocab))
    transition[:, 3] = 1.0
    spec = MarkovSpec(initial=np.full(vocab, 1.0 / vocab), transition=transition)
    denoiser = PerturbedDenoiser(ExactMarkovDenoiser(spec), 0.3)
    tasks = [TaskRecord(id=f"wide-{q:04d}", prompt=(0,), gold=Answer("3"), answer_type="string") for q in range(questions)]
    return tasks, (lambda task: denoiser)


class BrokenDenoiser(Denoiser):
    def __init__(self, vocab):
        self.vocab = vocab

    def conditionals(self, seq, positions, temperature):
        raise DenoiserError("model server went away")


class TempDirMixin:
    def make_dir(self):
        path = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, path, ignore_errors=True)
        return path

    def write_lines(self, *lines):
        path = self.make_dir() / "tasks.jsonl"
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path


class BpcTests(SimpleTestCase):
    def test_values(self):
        self.assertAlmostEqual(bpc(78.24, 70.58, 170.4, 128.0), 5.75, places=2)
        self.assertAlmostEqual(bpc(80.0, 70.0, 256.0, 128.0), 5.0)

    def test_non_positive_steps(self):
        with self.assertRaises(DomainError):
            bpc(80.0, 70.0, 0.0, 128.0)
        with self.assertRaises(DomainError):
            bpc(80.0, 70.0, 128.0, -1.0)


class IngestTests(TempDirMixin, SimpleTestCase):
    def test_empty_file(self):
        self.assertEqual(ingest_tasks(self.write_lines()), [])

    def test_valid_file_with_blank_line(self):
        path = self.write_lines(json.dumps(CYCLE_TASKS[0]), "", json.dumps(CYCLE_TASKS[1]))
        records = ingest_tasks(path)
        self.assertEqual([r.id for r in records], ["cycle-0", "cycle-1"])
        self.assertEqual([r.line for r in records], [1, 3])
        self.assertEqual(records[0].gold, Answer("30"))
        self.assertEqual(records[0].gen_len, GEN_LEN)

    def test_duplicate_ids_name_both_lines(self):
        path = self.write_lines(json.dumps(CYCLE_TASKS[0]), json.dumps(CYCLE_TASKS[1]), json.dumps(CYCLE_TASKS[0]))
        with self.assertRaises(TaskError) as ctx:
            ingest_tasks(path)
        self.assertEqual(ctx.exception.lines, (1, 3))

    def test_malformed_line(self):
        path = self.write_lines(json.dumps(CYCLE_TASKS[0]), '{"id": "broken"')
        with self.assertRaises(TaskError) as ctx:
            ingest_tasks(path)
        self.assertEqual(ctx.exception.lines, (2,))

    def test_unparseable_gold(self):
        path = self.write_lines(json.dumps({**CYCLE_TASKS[0], "gold": "   "}))
        with self.assertRaises(TaskError) as ctx:
            ingest_tasks(path)
        self.assertEqual(ctx.exception.lines, (1,))
        self.assertIn("gold", str(ctx.exception))

    def test_bad_chain(self):
        task = cycle_task(0)
        task["prompt"]["synthetic"]["transition"][0] = [0.5, 0.0, 0.0, 0.0]
        with self.assertRaises(TaskError):
            parse_task_records([task])

    def test_missing_file(self):
        with self.assertRaises(TaskError):
            ingest_tasks(self.make_dir() / "absent.jsonl")

    def test_literal_prompt(self):
        record = parse_task_records([{"id": "lit", "prompt": [1, 2], "gold": "5", "extract": {"separator": 3}}])[0]
        self.assertEqual(record.prompt, (1, 2))
        self.assertEqual(record.separator, 3)
        self.assertIsNone(record.gen_len)
        with self.assertRaises(TaskError):
            record.markov_spec()


class SynthTests(SimpleTestCase):
    def test_deterministic(self):
        self.assertEqual(synthesize_tasks(4, 8, 5, seed=3), synthesize_tasks(4, 8, 5, seed=3))
        self.assertNotEqual(synthesize_tasks(4, 8, 5, seed=3), synthesize_tasks(4, 8, 5, seed=4))

    def test_gold_is_most_probable_completion(self):
        records = parse_task_records(synthesize_tasks(4, 8, 5, seed=1))
        self.assertEqual([r.id for r in records], [f"synth-{n:05d}" for n in range(5)])
        for record in records:
            spec = record.markov_spec()
            best = viterbi(spec, MaskedSequence.fully_masked(spec.vocab, record.prompt, 8))
            self.assertEqual(record.extractor()(best.gen), record.gold)
            self.assertEqual(record.answer_type, "numeric")


class RunMethodTests(SimpleTestCase):
    def setUp(self):
        self.tasks = parse_task_records(CYCLE_TASKS)
        self.cparams = ConsistencyParams()
        self.factory = OracleDenoiserFactory()

    def run_cycle(self, method, **changes):
        return run_method(self.tasks, method, cycle_config(**changes), self.cparams, self.factory)

    def test_step_counts_per_method(self):
        baseline = self.run_cycle("baseline")
        majority = self.run_cycle("majority")
        dvoting = self.run_cycle("dvoting")
        for report in (baseline, majority, dvoting):
            self.assertEqual(report.accuracy, 1.0)
            self.assertEqual(report.questions, 4)
        self.assertEqual(baseline.mean_steps, 8.0)
        self.assertEqual(baseline.mean_samples, 1.0)
        self.assertEqual(majority.mean_steps, 20.0)
        self.assertEqual(majority.mean_samples, 5.0)
        self.assertEqual(dvoting.mean_steps, 4.0)
        self.assertEqual(dvoting.stop_reasons, {"answer_converged": 4})
        self.assertEqual(dvoting.consistency_histogram, {"2/2": 4})
        self.assertEqual(dvoting.nupr, {"2": 1.0, "3": None})

        attach_comparisons([baseline, majority, dvoting])
        self.assertEqual(dvoting.speedup_vs["majority"], 5.0)
        self.assertEqual(dvoting.speedup_vs["baseline"], 2.0)
        self.assertEqual(dvoting.bpc, 0.0)
        self.assertIsNone(baseline.bpc)

    def test_nupr_order_follows_consistency_params(self):
        report = run_method(self.tasks, "majority", cycle_config(), ConsistencyParams(k=4), self.factory)
        self.assertEqual(report.nupr, {"2": 1.0, "3": 1.0, "4": 1.0})
        self.assertEqual(list(report.summary()["nupr"]), ["2", "3", "4"])

    def test_dvoting_keeps_baseline_accuracy_on_noisy_suite(self):
        tasks, factory = wide_suite(1000)
        cfg = GenerationConfig(gen_len=1, block_size=1, alpha=math.inf, temperature=1.0, max_samples=5)
        baseline = run_method(tasks, "baseline", cfg, self.cparams, factory)
        dvoting = run_method(tasks, "dvoting", cfg, self.cparams, factory)
        self.assertEqual(baseline.mean_samples, 1.0)
        self.assertGreaterEqual(dvoting.accuracy, baseline.accuracy - 0.01)

    def test_task_order_and_jobs_do_not_change_results(self):
        tasks = parse_task_records(synthesize_tasks(4, 8, 6, seed=2))
        cfg = cycle_config(temperature=1.0)
        first = run_method(tasks, "dvoting", cfg, self.cparams, self.factory)
        second = run_method(list(reversed(tasks)), "dvoting", cfg, self.cparams, self.factory, jobs=3)
        self.assertEqual([o.to_record() for o in first.outcomes], [o.to_record() for o in second.outcomes])

    def test_unrunnable_tasks_are_skipped(self):
        literal = parse_task_records([{"id": "lit", "prompt": [1], "gold": "5"}])
        report = run_method(self.tasks + literal, "dvoting", cycle_config(), self.cparams, self.factory)
        self.assertEqual(report.questions, 4)
        self.assertEqual(report.skipped, 1)

    def test_every_task_skipped(self):
        with self.assertRaises(RunError):
            run_method(self.tasks, "dvoting", GenerationConfig(gen_len=16, block_size=4), self.cparams, self.factory)

    def test_every_task_failing_in_the_denoiser(self):
        with self.assertRaises(DenoiserError):
            run_method(self.tasks, "dvoting", cycle_config(), self.cparams, lambda task: BrokenDenoiser(VocabSpec(VOCAB)))

    def test_consistency_bin(self):
        answers = [Answer(v) for v in "aabac"]
        result = RunResult(Answer("a"), 5, StepLedger(), answers, "budget_exhausted")
        outcome = QuestionOutcome("q", "dvoting", "dvoting", result, True)
        self.assertEqual(outcome.consistency_bin, "3/5")
        self.assertEqual(result.consistency_level, 0.6)


class SweepTests(SimpleTestCase):
    def setUp(self):
        self.tasks = parse_task_records(CYCLE_TASKS)
        self.factory = OracleDenoiserFactory()

    def test_sample_budget(self):
        reports = sweep("n", ["1", "5"], cycle_config(), self.tasks, ConsistencyParams(), self.factory)
        self.assertEqual([r.label for r in reports], ["dvoting[n=1]", "dvoting[n=5]"])
        self.assertEqual([r.mean_steps for r in reports], [2.0, 4.0])

    def test_alpha_extremes(self):
        tasks = parse_task_records(synthesize_tasks(4, 8, 8, seed=5))
        low, high = sweep("alpha", ["0", "inf"], cycle_config(temperature=1.0), tasks, ConsistencyParams(), self.factory)
        self.assertEqual(high.label, "dvoting[alpha=inf]")
        self.assertGreaterEqual(low.mean_steps, 16)
        self.assertLess(10, low.mean_steps)
        self.assertLessEqual(high.mean_steps, 10)

    def test_block_size(self):
        small, large = sweep("block", ["4", "64"], cycle_config(), self.tasks, ConsistencyParams(), self.factory)
        self.assertEqual((small.mean_steps, large.mean_steps), (4.0, 2.0))

    def test_more_samples_cost_more_and_lose_nothing(self):
        tasks, factory = wide_suite(1000)
        cfg = GenerationConfig(gen_len=1, block_size=1, alpha=math.inf, temperature=1.0)
        reports = sweep("n", [1, 3, 5, 9], cfg, tasks, ConsistencyParams(), factory)
        steps = [r.mean_steps for r in reports]
        accuracy = [r.accuracy for r in reports]
        self.assertEqual(steps, sorted(set(steps)))
        for before, after in zip(accuracy, accuracy[1:]):
            self.assertGreaterEqual(after, before - 0.01)
        self.assertGreater(accuracy[-1], accuracy[0])

    def test_invalid_values(self):
        for axis, raw in (("alpha", "-1"), ("alpha", "fast"), ("n", "0"), ("n", "x"), ("speed", "1")):
            with self.subTest(axis=axis, raw=raw), self.assertRaises(DomainError):
                parse_sweep_value(axis, raw)
        with self.assertRaises(DomainError):
            sweep("n", [], cycle_config(), self.tasks, ConsistencyParams(), self.factory)


class ReportTests(TempDirMixin, SimpleTestCase):
    def build_reports(self):
        tasks = parse_task_records(CYCLE_TASKS)
        cparams = ConsistencyParams()
        reports = [run_method(tasks, m, cycle_config(), cparams, OracleDenoiserFactory()) for m in ("dvoting", "baseline")]
        attach_comparisons(reports)
        return reports

    def test_files(self):
        out = self.make_dir()
        written = emit_report(self.build_reports(), out)
        names = sorted(str(p.relative_to(out)) for p in written)
        self.assertEqual(names, [
            "plotdata/consistency_by_outcome.csv",
            "plotdata/nupr.csv",
            "plotdata/voting_consistency.csv",
            "results.jsonl",
            "summary.csv",
            "summary.json",
        ])
        summary = json.loads((out / "summary.json").read_text())
        self.assertEqual([r["label"] for r in summary["reports"]], ["baseline", "dvoting"])
        self.assertEqual(summary["reports"][1]["speedup_vs"], {"baseline": 2.0})
        records = [json.loads(line) for line in (out / "results.jsonl").read_text().splitlines()]
        self.assertEqual(len(records), 8)
        self.assertEqual(records[0]["method"], "baseline")
        csv_lines = (out / "summary.csv").read_text().splitlines()
        self.assertEqual(csv_lines[0], "label,method,accuracy,mean_steps,mean_samples,bpc,questions,skipped")
        outcome_lines = (out / "plotdata" / "consistency_by_outcome.csv").read_text().splitlines()
        self.assertEqual(outcome_lines, ["label,bin,outcome,count", "dvoting,2/2,both_correct,4"])

    def test_reruns_are_byte_identical(self):
        first, second = self.make_dir(), self.make_dir()
        emit_report(self.build_reports(), first)
        emit_report(self.build_reports(), second)
        for path in first.rglob("*"):
            if path.is_file():
                self.assertEqual(path.read_bytes(), (second / path.relative_to(first)).read_bytes(), path.name)

    def test_no_reports(self):
        with self.assertRaises(DomainError):
            emit_report([], self.make_dir())


class CommandTests(TempDirMixin, TestCase):
    def setUp(self):
        self.tasks_path = self.write_lines(*(json.dumps(t) for t in CYCLE_TASKS))
        self.out = self.make_dir() / "report"

    def call(self, *args):
        stdout = StringIO()
        call_command(*args, stdout=stdout, stderr=StringIO())
        return stdout.getvalue()

    def run_args(self, *extra):
        return ("run", "--tasks", str(self.tasks_path), "--gen-len", "8", "--block-size", "4",
                "--out", str(self.out), *extra)

    def assertExitCode(self, code, *args):
        with self.assertRaises(CommandError) as ctx:
            self.call(*args)
        self.assertEqual(ctx.exception.returncode, code)

    def test_synth(self):
        path = self.make_dir() / "synth.jsonl"
        output = self.call("synth", "--vocab", "4", "--length", "8", "--count", "3", "--out", str(path))
        self.assertIn("Wrote 3 tasks", output)
        self.assertEqual(len(ingest_tasks(path)), 3)

    def test_synth_rejects_tiny_vocab(self):
        self.assertExitCode(EXIT_CONFIG, "synth", "--vocab", "1", "--length", "8", "--count", "3",
                            "--out", str(self.make_dir() / "t.jsonl"))

    def test_run(self):
        output = self.call(*self.run_args("--method", "baseline", "--method", "dvoting"))
        self.assertIn("dvoting: accuracy 1.0000, mean steps 4.00", output)
        self.assertIn("BPC 0.00", output)
        summary = json.loads((self.out / "summary.json").read_text())
        self.assertEqual(len(summary["reports"]), 2)
        self.assertEqual(EvaluationRun.objects.count(), 0)

    def test_run_persists(self):
        self.call(*self.run_args("--method", "dvoting", "--persist"))
        run = EvaluationRun.objects.get()
        self.assertEqual(run.status, RunStatus.FINISHED)
        self.assertEqual(run.results.count(), 4)

    def test_sweep(self):
        output = self.call("sweep", "--tasks", str(self.tasks_path), "--axis", "n", "--values", "1,5",
                           "--baseline", "--gen-len", "8", "--block-size", "4", "--out", str(self.out))
        self.assertIn("dvoting[n=5]", output)
        summary = json.loads((self.out / "summary.json").read_text())
        self.assertEqual([r["label"] for r in summary["reports"]], ["baseline", "dvoting[n=1]", "dvoting[n=5]"])

    def test_config_error(self):
        self.assertExitCode(EXIT_CONFIG, *self.run_args("--alpha", "-1"))

    def test_remote_without_vocab(self):
        self.assertExitCode(EXIT_CONFIG, *self.run_args("--denoiser-url", "http://denoiser.invalid"))

    def test_empty_task_file(self):
        empty = self.write_lines()
        self.assertExitCode(EXIT_TASK, "run", "--tasks", str(empty), "--out", str(self.out))

    def test_missing_task_file(self):
        self.assertExitCode(EXIT_TASK, "run", "--tasks", str(self.make_dir() / "none.jsonl"), "--out", str(self.out))

    def test_denoiser_failure(self):
        with mock.patch('requests.Session.post', return_value=mock.Mock(status_code=500, text="boom")):
            self.assertExitCode(EXIT_DENOISER, *self.run_args("--denoiser-url", "http://denoiser.invalid", "--vocab", "4"))

    def test_serve_check(self):
        reply = mock.Mock(status_code=200, text="")
        reply.json.return_value = {"logits": [[0, 0, 0, 0], [0, 0, 0, 0]]}
        with mock.patch('requests.Session.post', return_value=reply):
            output = self.call("serve_check", "--url", "http://denoiser.invalid", "--vocab", "4")
        self.assertIn("speaks the logits protocol", output)
        self.assertIn('"positions"', output)

    def test_serve_check_failures(self):
        with mock.patch('requests.Session.post', return_value=mock.Mock(status_code=500, text="boom")):
            self.assertExitCode(EXIT_DENOISER, "serve_check", "--url", "http://denoiser.invalid", "--vocab", "4")
        with self.settings(DVOTE_DENOISER_URL=""):
            self.assertExitCode(EXIT_CONFIG, "serve_check", "--vocab", "4")


class EvaluationRunApiTests(TestCase):
    def setUp(self):
        self.client = APIClient()
        self.user = get_user_model().objects.create_user(username="tester", password="secret")
        self.payload = {"method": "dvoting", "config": {"gen_len": 8, "block_size": 4}, "tasks": CYCLE_TASKS}

    def test_create_queues_the_run(self):
        self.client.force_authenticate(self.user)
        with mock.patch('harness.tasks.run_evaluation_task.delay') as delay:
            response = self.client.post('/runs/', self.payload, format='json')
        self.assertEqual(response.status_code, 202)
        self.assertEqual(response.data['status'], RunStatus.PENDING)
        run = EvaluationRun.objects.get()
        self.assertEqual(run.creator, self.user)
        delay.assert_called_once()
        self.assertEqual(delay.call_args.args[0], run.id)

    def test_create_validates_tasks(self):
        self.client.force_authenticate(self.user)
        duplicate = dict(self.payload, tasks=[CYCLE_TASKS[0], CYCLE_TASKS[0]])
        response = self.client.post('/runs/', duplicate, format='json')
        self.assertEqual(response.status_code, 400)
        self.assertIn('tasks', response.data)
        response = self.client.post('/runs/', dict(self.payload, config={"alpha": "-1"}), format='json')
        self.assertEqual(response.status_code, 400)
        self.assertFalse(EvaluationRun.objects.exists())

    def test_create_needs_login(self):
        response = self.client.post('/runs/', self.payload, format='json')
        self.assertIn(response.status_code, (401, 403))

    def test_task_runs_and_results_are_listed(self):
        run = EvaluationRun.objects.create(label="dvoting", method="dvoting")
        run_evaluation_task(run.id, CYCLE_TASKS, "dvoting", config={"gen_len": 8, "block_size": 4})
        run.refresh_from_db()
        self.assertEqual(run.status, RunStatus.FINISHED)
        self.assertEqual(run.accuracy, 1.0)
        self.assertEqual(run.mean_steps, 4.0)

        response = self.client.get('/runs/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response['X-Total-Count'], '1')
        response = self.client.get(f'/runs/{run.uuid}/results/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response['X-Total-Count'], '4')
        self.assertEqual([r['task_id'] for r in response.data], [t['id'] for t in CYCLE_TASKS])
        self.assertTrue(all(r['samples_used'] == 2 for r in response.data))

    def test_failed_task_records_the_error(self):
        run = EvaluationRun.objects.create(label="dvoting", method="dvoting")
        run_evaluation_task(run.id, CYCLE_TASKS, "dvoting", config={"alpha": "-1"})
        run.refresh_from_db()
        self.assertEqual(run.status, RunStatus.FAILED)
        self.assertIn("alpha", run.error)

    def test_schema_lists_methods(self):
        response = self.client.get('/api/schema/?format=json')
        self.assertEqual(response.status_code, 200)
        schema = json.loads(response.content)
        parameters = {p['name']: p for p in schema['paths']['/runs/']['get']['parameters']}
        self.assertEqual(parameters['method']['schema']['enum'], ["baseline", "majority", "dvoting"])
