import math

import numpy as np
from django.test import SimpleTestCase

from consistency.metrics import ConsistencyParams, SampleSet, compute_remask_mask
from core.config import GenerationConfig
from core.exceptions import DenoiserError, DomainError, RunError
from core.seeding import derive_seed
from core.types import MaskedSequence, StepLedger, VocabSpec, make_schedule
from decode.decoding import decode_sequence
from denoiser.denoisers import Denoiser, ExactMarkovDenoiser, PerturbedDenoiser, UniformDenoiser
from denoiser.markov import MarkovSpec
from engine.answers import (
    ANSWER_NUMERIC,
    ANSWER_STRING,
    Answer,
    AnswerExtractor,
    canonicalize,
    extract_answer,
    majority_vote,
    modal_parseable,
)
from engine.dvoting import (
    STOP_ANSWER_CONVERGED,
    STOP_BUDGET_EXHAUSTED,
    STOP_TOKEN_CONVERGED,
    dvoting_run,
    majority_voting_run,
)

U = Answer.unparseable()

# With early stopping and retention switched off dVoting draws exactly the samples majority voting draws.
NO_EARLY_STOP = ConsistencyParams(min_agree=6, c_stop=math.inf, answer_retention=False)


class FlakyDenoiser(Denoiser):
    """Uniform conditionals, failing on the listed (1-based) calls."""

    def __init__(self, vocab, failing):
        self.vocab = vocab
        self.failing = set(failing)
        self.calls = 0

    def conditionals(self, seq, positions, temperature):
        self.calls += 1
        if self.calls in self.failing:
            raise DenoiserError(f"call {self.calls} failed")
        return np.full((len(positions), self.vocab.size), 1.0 / self.vocab.size)


def single_decode(prompt, cfg, denoiser, extractor):
    ledger = StepLedger()
    ledger.begin_sample()
    seq = MaskedSequence.fully_masked(denoiser.vocab, prompt, cfg.gen_len)
    out = decode_sequence(seq, make_schedule(cfg.gen_len, cfg.block_size), cfg, denoiser,
                          np.random.default_rng(0), ledger)
    return extractor(out.gen), ledger.forwards


class CanonicalizeTests(SimpleTestCase):
    def test_numeric(self):
        self.assertEqual(canonicalize(" 007 ", ANSWER_NUMERIC), "7")
        self.assertEqual(canonicalize("+5", ANSWER_NUMERIC), "5")
        self.assertEqual(canonicalize("-0", ANSWER_NUMERIC), "0")
        self.assertEqual(canonicalize("-12", ANSWER_NUMERIC), "-12")

    def test_string(self):
        self.assertEqual(canonicalize("  Hello \t World "), "hello world")

    def test_idempotent(self):
        for raw in ("0042", " A  b ", "-0", "x"):
            for answer_type in (ANSWER_NUMERIC, ANSWER_STRING):
                once = canonicalize(raw, answer_type)
                self.assertEqual(canonicalize(once, answer_type), once)

    def test_blank_is_unparseable(self):
        self.assertFalse(Answer.parse("   ").parseable)


class ExtractAnswerTests(SimpleTestCase):
    def test_after_last_separator(self):
        extractor = AnswerExtractor(separator=9, answer_type=ANSWER_NUMERIC)
        self.assertEqual(extract_answer([1, 9, 4, 2, 9, 3, 5], extractor), Answer("35"))

    def test_width_limits_suffix(self):
        extractor = AnswerExtractor(separator=9, width=1)
        self.assertEqual(extract_answer([9, 4, 2], extractor).value, "4")

    def test_missing_separator_or_empty_suffix(self):
        extractor = AnswerExtractor(separator=9)
        self.assertFalse(extract_answer([1, 2, 3], extractor).parseable)
        self.assertFalse(extract_answer([1, 2, 9], extractor).parseable)

    def test_tail_without_separator(self):
        self.assertEqual(extract_answer([1, 2, 3], AnswerExtractor(width=2)).value, "2 3")
        self.assertEqual(extract_answer([1, 2, 3], AnswerExtractor(width=2, answer_type=ANSWER_NUMERIC)).value, "23")

    def test_large_ids_are_space_separated(self):
        self.assertEqual(extract_answer([12, 3], AnswerExtractor()).value, "12 3")

    def test_suffixes_of_different_lengths_stay_distinct(self):
        extractor = AnswerExtractor(separator=50)
        self.assertEqual(extractor([7, 50, 1, 2]), Answer("1 2"))
        self.assertEqual(extractor([7, 50, 12]), Answer("12"))
        self.assertNotEqual(extractor([7, 50, 1, 2]), extractor([7, 50, 12]))

    def test_numeric_suffix_needs_digit_tokens(self):
        extractor = AnswerExtractor(separator=50, answer_type=ANSWER_NUMERIC)
        self.assertEqual(extractor([7, 50, 1, 2]), Answer("12"))
        self.assertFalse(extractor([7, 50, 12]).parseable)

    def test_leading_zeros_canonicalized(self):
        extractor = AnswerExtractor(width=3, answer_type=ANSWER_NUMERIC)
        self.assertEqual(extract_answer([0, 0, 7], extractor).value, "7")


class VoteTests(SimpleTestCase):
    def test_plurality(self):
        self.assertEqual(majority_vote([Answer("a"), Answer("b"), Answer("a")]), Answer("a"))

    def test_tie_goes_to_first_seen(self):
        self.assertEqual(majority_vote([Answer("b"), Answer("a"), Answer("a"), Answer("b")]), Answer("b"))

    def test_unparseable_never_wins_over_an_answer(self):
        self.assertEqual(majority_vote([U, U, Answer("a")]), Answer("a"))

    def test_all_unparseable(self):
        self.assertFalse(majority_vote([U, U]).parseable)

    def test_empty(self):
        with self.assertRaises(DomainError):
            majority_vote([])

    def test_modal_parseable_ties_to_smallest(self):
        self.assertEqual(modal_parseable([Answer("b"), Answer("a"), U, U]), ("a", 1))
        self.assertIsNone(modal_parseable([U]))


class DVotingRunTests(SimpleTestCase):
    def setUp(self):
        self.spec = MarkovSpec.from_params({"vocab": 4, "seed": 3, "sharpness": 0.5})
        self.denoiser = ExactMarkovDenoiser(self.spec)
        self.extractor = AnswerExtractor(width=2, answer_type=ANSWER_NUMERIC)
        self.prompt = [1, 2]

    def run_dvoting(self, cfg, cparams=None, seed=None):
        return dvoting_run(self.prompt, cfg, cparams or ConsistencyParams(), self.denoiser,
                           make_schedule(cfg.gen_len, cfg.block_size), self.extractor, seed=seed)

    def test_greedy_oracle_stops_after_two_identical_samples(self):
        cfg = GenerationConfig(gen_len=8, block_size=4, temperature=0.0)
        answer, forwards = single_decode(self.prompt, cfg, self.denoiser, self.extractor)
        result = self.run_dvoting(cfg)
        self.assertEqual(result.stop_reason, STOP_ANSWER_CONVERGED)
        self.assertEqual(result.samples_used, 2)
        self.assertEqual(result.total_steps, 2 * forwards)
        self.assertEqual(result.final_answer, answer)
        np.testing.assert_array_equal(result.samples[0], result.samples[1])
        # one mask before the second sample, one more before stopping
        self.assertEqual(len(result.m_history), 2)
        self.assertTrue(result.m_history[0].all())
        self.assertFalse(result.m_history[1].any())

    def test_token_stop_when_answers_never_parse(self):
        cfg = GenerationConfig(gen_len=8, block_size=4, temperature=0.0)
        extractor = AnswerExtractor(separator=99)
        result = dvoting_run(self.prompt, cfg, ConsistencyParams(), self.denoiser,
                             make_schedule(8, 4), extractor)
        self.assertEqual(result.stop_reason, STOP_TOKEN_CONVERGED)
        self.assertEqual(result.samples_used, 2)
        self.assertFalse(result.final_answer.parseable)

    def test_retained_tokens_survive_resampling(self):
        cfg = GenerationConfig(gen_len=8, block_size=4, temperature=1.0, max_samples=5)
        cparams = ConsistencyParams(c_stop=math.inf)
        for seed in range(20):
            result = self.run_dvoting(cfg, cparams, seed=seed)
            answers = result.per_sample_answers
            for j in range(1, result.samples_used):
                plan = compute_remask_mask(SampleSet(np.stack(result.samples[:j]), tuple(answers[:j])), cparams)
                np.testing.assert_array_equal(plan.mask, result.m_history[j - 1])
                kept = ~plan.mask
                np.testing.assert_array_equal(result.samples[j][kept], plan.tokens[kept])

    def test_fewer_samples_is_a_prefix_of_more(self):
        cparams = ConsistencyParams(c_stop=math.inf)
        for seed in range(10):
            short = self.run_dvoting(GenerationConfig(gen_len=8, block_size=4, temperature=1.0, max_samples=3),
                                     cparams, seed=seed)
            long = self.run_dvoting(GenerationConfig(gen_len=8, block_size=4, temperature=1.0, max_samples=5),
                                    cparams, seed=seed)
            self.assertEqual(long.per_sample_answers[:short.samples_used], short.per_sample_answers)
            self.assertEqual(long.steps.per_sample[:len(short.steps.per_sample)], short.steps.per_sample)
            for a, b in zip(short.samples, long.samples):
                np.testing.assert_array_equal(a, b)

    def test_single_sample_budget(self):
        cfg = GenerationConfig(gen_len=8, block_size=4, temperature=1.0, max_samples=1)
        result = self.run_dvoting(cfg)
        self.assertEqual(result.samples_used, 1)
        self.assertEqual(result.stop_reason, STOP_BUDGET_EXHAUSTED)
        self.assertEqual(result.m_history, [])

    def test_same_seed_same_run(self):
        cfg = GenerationConfig(gen_len=8, block_size=4, temperature=1.0)
        first, second = self.run_dvoting(cfg, seed=4), self.run_dvoting(cfg, seed=4)
        self.assertEqual(first.per_sample_answers, second.per_sample_answers)
        self.assertEqual(first.total_steps, second.total_steps)


class FailureTests(SimpleTestCase):
    def setUp(self):
        self.cfg = GenerationConfig(gen_len=4, block_size=4, alpha=math.inf, temperature=1.0, max_samples=3)
        self.schedule = make_schedule(4, 4)
        self.extractor = AnswerExtractor()

    def test_failed_sample_is_dropped(self):
        denoiser = FlakyDenoiser(VocabSpec(3), failing=[2])
        result = majority_voting_run([0], self.cfg, denoiser, self.schedule, self.extractor)
        self.assertEqual(result.samples_used, 2)
        self.assertEqual(result.failed_samples, 1)
        self.assertEqual(result.total_steps, 2)
        self.assertEqual(len(result.per_sample_answers), 2)
        self.assertEqual(result.attempts, 3)

    def test_dvoting_drops_failed_sample(self):
        denoiser = FlakyDenoiser(VocabSpec(3), failing=[1])
        result = dvoting_run([0], self.cfg, ConsistencyParams(), denoiser, self.schedule, self.extractor)
        self.assertEqual(result.failed_samples, 1)
        self.assertGreaterEqual(result.samples_used, 1)

    def test_failed_samples_count_against_the_budget(self):
        denoiser = FlakyDenoiser(VocabSpec(3), failing=[2])
        result = dvoting_run([0], self.cfg, NO_EARLY_STOP, denoiser, self.schedule, self.extractor)
        self.assertEqual(result.stop_reason, STOP_BUDGET_EXHAUSTED)
        self.assertEqual((result.samples_used, result.failed_samples), (2, 1))
        self.assertEqual(result.attempts, self.cfg.max_samples)

    def test_every_sample_failing(self):
        denoiser = FlakyDenoiser(VocabSpec(3), failing=[1, 2, 3])
        with self.assertRaises(RunError):
            majority_voting_run([0], self.cfg, denoiser, self.schedule, self.extractor)
        denoiser = FlakyDenoiser(VocabSpec(3), failing=[1, 2, 3])
        with self.assertRaises(RunError):
            dvoting_run([0], self.cfg, ConsistencyParams(), denoiser, self.schedule, self.extractor)


class MajorityVotingRunTests(SimpleTestCase):
    def test_steps_scale_with_samples(self):
        cfg = GenerationConfig(gen_len=8, block_size=4, alpha=math.inf, temperature=1.0, max_samples=4)
        result = majority_voting_run([0], cfg, UniformDenoiser(VocabSpec(3)), make_schedule(8, 4), AnswerExtractor())
        self.assertEqual(result.total_steps, 8)
        self.assertEqual(result.steps.per_sample, [2, 2, 2, 2])
        self.assertEqual(result.stop_reason, STOP_BUDGET_EXHAUSTED)
        self.assertEqual(result.samples_used, 4)


class NoisyOracleTests(SimpleTestCase):
    """Votes over a single-token answer the oracle gets right with probability 0.7."""

    def test_binomial_majority_law(self):
        spec = MarkovSpec(initial=[0.5, 0.5], transition=np.eye(2))
        denoiser = PerturbedDenoiser(ExactMarkovDenoiser(spec), 0.6)
        cfg = GenerationConfig(gen_len=1, block_size=1, alpha=math.inf, temperature=1.0, max_samples=5)
        schedule = make_schedule(1, 1)
        extractor = AnswerExtractor(answer_type=ANSWER_NUMERIC)
        questions = 4000
        majority_correct = dvoting_correct = 0
        for q in range(questions):
            seed = derive_seed(17, "question", q)
            majority = majority_voting_run([0], cfg, denoiser, schedule, extractor, seed=seed)
            dvoting = dvoting_run([0], cfg, NO_EARLY_STOP, denoiser, schedule, extractor, seed=seed)
            self.assertEqual(dvoting.per_sample_answers, majority.per_sample_answers)
            majority_correct += majority.final_answer == Answer("0")
            dvoting_correct += dvoting.final_answer == Answer("0")
        # P(Binomial(5, 0.7) >= 3)
        expected = sum(math.comb(5, k) * 0.7 ** k * 0.3 ** (5 - k) for k in range(3, 6))
        self.assertAlmostEqual(expected, 0.8369, places=4)
        self.assertAlmostEqual(majority_correct / questions, expected, delta=0.02)
        self.assertEqual(dvoting_correct, majority_correct)

    def test_early_stop_saves_steps_without_losing_accuracy(self):
        vocab = 100
        transition = np.zeros((vocab, vocab))
        transition[:, 3] = 1.0
        spec = MarkovSpec(initial=np.full(vocab, 1.0 / vocab), transition=transition)
        denoiser = PerturbedDenoiser(ExactMarkovDenoiser(spec), 0.3)
        cfg = GenerationConfig(gen_len=1, block_size=1, alpha=math.inf, temperature=1.0, max_samples=5)
        schedule = make_schedule(1, 1)
        extractor = AnswerExtractor()
        gold = Answer("3")
        for run_seed in range(5):
            with self.subTest(seed=run_seed):
                majority_correct = dvoting_correct = majority_steps = dvoting_steps = 0
                for q in range(1000):
                    seed = derive_seed(run_seed, "question", q)
                    majority = majority_voting_run([0], cfg, denoiser, schedule, extractor, seed=seed)
                    dvoting = dvoting_run([0], cfg, ConsistencyParams(), denoiser, schedule, extractor, seed=seed)
                    self.assertEqual(dvoting.per_sample_answers,
                                     majority.per_sample_answers[:dvoting.samples_used])
                    majority_correct += majority.final_answer == gold
                    dvoting_correct += dvoting.final_answer == gold
                    majority_steps += majority.total_steps
                    dvoting_steps += dvoting.total_steps
                self.assertLess(dvoting_steps, majority_steps)
                self.assertLess((majority_correct - dvoting_correct) / 1000, 0.01)
