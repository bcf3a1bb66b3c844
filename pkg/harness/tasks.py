import logging

from celery import shared_task
from django.db import transaction

from consistency.serializers import build_consistency_params
from core.exceptions import DvoteError
from core.serializers import build_generation_config
from harness.methods import MethodReport, OracleDenoiserFactory, attach_comparisons, run_method
from harness.models import EvaluationRun, QuestionResult, RunStatus
from harness.reports import fixed
from harness.taskfile import parse_task_records

logger = logging.getLogger(__name__)


def store_report(report: MethodReport, run: EvaluationRun = None, creator=None) -> EvaluationRun:
    """Save a report and its per-question results, creating the run row if needed."""
    summary = fixed(report.summary())
    with transaction.atomic():
        if run is None:
            run = EvaluationRun.objects.create(
                creator=creator,
                label=report.label,
                method=report.method,
                config=summary["config"],
            )
        run.label = report.label
        run.status = RunStatus.FINISHED
        run.config = summary["config"]
        run.accuracy = report.accuracy
        run.mean_steps = report.mean_steps
        run.mean_samples = report.mean_samples
        run.questions = report.questions
        run.skipped = report.skipped
        run.summary = summary
        run.error = ""
        run.save()
        run.results.all().delete()
        QuestionResult.objects.bulk_create([
            QuestionResult(
                run=run,
                task_id=outcome.task_id,
                final_answer=str(outcome.result.final_answer),
                correct=outcome.correct,
                samples_used=outcome.result.samples_used,
                steps=outcome.result.total_steps,
                stop_reason=outcome.result.stop_reason,
                per_sample_answers=[str(a) for a in outcome.result.per_sample_answers],
                consistency_level=outcome.result.consistency_level,
            )
            for outcome in report.outcomes
        ])
    return run


@shared_task
def run_evaluation_task(run_id, tasks, method, config=None, consistency=None, epsilon=0.0):
    run = EvaluationRun.objects.get(id=run_id)
    run.status = RunStatus.RUNNING
    run.save(update_fields=['status', 'updated_at'])
    try:
        cfg = build_generation_config(config or {})
        cparams = build_consistency_params({"tau_frac": cfg.tau_frac, "c_stop": cfg.stop_count, **(consistency or {})})
        records = parse_task_records(tasks)
        report = run_method(records, method, cfg, cparams, OracleDenoiserFactory(epsilon))
        attach_comparisons([report])
    except DvoteError as e:
        logger.warning("evaluation run %s failed: %s", run.uuid, e)
        run.status = RunStatus.FAILED
        run.error = str(e)
        run.save(update_fields=['status', 'error', 'updated_at'])
        return f'Evaluation run {run.uuid} failed.'
    store_report(report, run=run)
    return f'Evaluation run {run.uuid} finished with accuracy {report.accuracy:.4f}.'
