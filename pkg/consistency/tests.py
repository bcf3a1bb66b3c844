import math
from collections import Counter

import numpy as np
from django.test import SimpleTestCase

from consistency.metrics import (
    ConsistencyParams,
    SampleSet,
    check_answer_stop,
    check_token_stop,
    compute_remask_mask,
    nupr_at_k,
    retention_threshold,
    token_agreement,
    voting_consistency_level,
)
from consistency.serializers import build_consistency_params
from core.exceptions import ConfigError, DomainError
from engine.answers import Answer

U = Answer.unparseable()


def answers(*values):
    return [Answer(v) if v is not None else U for v in values]


def counted_nupr(samples, k):
    hits = 0
    for column in zip(*samples):
        if max(Counter(column).values()) >= k:
            hits += 1
    return hits / len(samples[0])


def counted_consistency(values):
    counts = {}
    for value in values:
        counts[value] = counts.get(value, 0) + 1
    return max(counts.values()) / len(values)


class BruteForceCounterTests(SimpleTestCase):
    def test_metrics_match_counters(self):
        rng = np.random.default_rng(99)
        for _ in range(500):
            size = int(rng.integers(1, 7))
            length = int(rng.integers(1, 33))
            vocab = int(rng.integers(2, 6))
            samples = rng.integers(0, vocab, size=(size, length))
            raw = [str(v) if v >= 0 else None for v in rng.integers(-1, 3, size=size)]
            sample_set = SampleSet(samples, tuple(answers(*raw)))
            rows = samples.tolist()
            for k in range(1, size + 1):
                self.assertEqual(nupr_at_k(sample_set, k), counted_nupr(rows, k))
            keys = [v if v is not None else "unparseable" for v in raw]
            self.assertEqual(voting_consistency_level(sample_set.answers), counted_consistency(keys))


class NuprTests(SimpleTestCase):
    def setUp(self):
        self.sample_set = SampleSet.from_sequences([[1, 2, 3], [1, 2, 4], [1, 5, 6]], answers("a", "a", "b"))

    def test_values(self):
        self.assertAlmostEqual(nupr_at_k(self.sample_set, 2), 2 / 3)
        self.assertAlmostEqual(nupr_at_k(self.sample_set, 3), 1 / 3)
        self.assertEqual(nupr_at_k(self.sample_set, 1), 1.0)

    def test_k_above_sample_count(self):
        with self.assertRaises(DomainError):
            nupr_at_k(self.sample_set, 4)

    def test_single_sample_full_agreement_at_k_1(self):
        self.assertEqual(nupr_at_k(SampleSet.from_sequences([[0, 1]], answers("x")), 1), 1.0)


class VotingConsistencyTests(SimpleTestCase):
    def test_levels(self):
        self.assertEqual(voting_consistency_level(answers("a", "a", "b", "a", "c")), 0.6)
        self.assertEqual(voting_consistency_level(answers("x")), 1.0)

    def test_unparseable_counts_as_one_value(self):
        self.assertEqual(voting_consistency_level(answers(None, None, "a")), 2 / 3)

    def test_empty(self):
        with self.assertRaises(DomainError):
            voting_consistency_level([])


class RemaskTests(SimpleTestCase):
    def test_threshold(self):
        params = ConsistencyParams()
        self.assertEqual(retention_threshold(params, 2), 2)
        self.assertEqual(retention_threshold(params, 5), 3)
        self.assertEqual(retention_threshold(ConsistencyParams(tau_frac=0.3), 10), 3)

    def test_only_the_disputed_answer_is_remasked(self):
        # "1+1=2" against "1+1=3", one id per character
        ids = {"1": 1, "+": 10, "=": 11, "2": 2, "3": 3}
        rows = [[ids[c] for c in "1+1=2"], [ids[c] for c in "1+1=3"]]
        plan = compute_remask_mask(SampleSet.from_sequences(rows, answers("2", "3")), ConsistencyParams())
        self.assertEqual(plan.mask.tolist(), [False, False, False, False, True])
        self.assertEqual(plan.tokens[:4].tolist(), [1, 10, 1, 11])

    def test_modal_token_retained(self):
        sample_set = SampleSet.from_sequences([[1, 2, 3], [1, 2, 4], [1, 5, 6]], answers(None, None, None))
        plan = compute_remask_mask(sample_set, ConsistencyParams())
        self.assertEqual(plan.mask.tolist(), [False, False, True])
        self.assertEqual(plan.tokens[:2].tolist(), [1, 2])
        self.assertEqual(plan.retained, 2)

    def test_answer_clause_keeps_positions_shared_by_winning_answer(self):
        sample_set = SampleSet.from_sequences(
            [[0, 1, 2, 3], [0, 1, 4, 3], [0, 2, 2, 3], [5, 6, 7, 0]],
            answers("42", "42", "42", "7"),
        )
        plan = compute_remask_mask(sample_set, ConsistencyParams(tau_frac=1.0, min_agree=4))
        # no position reaches 4 votes; the three "42" samples agree at 0 and 3
        self.assertEqual(plan.mask.tolist(), [False, True, True, False])
        self.assertEqual(plan.tokens[[0, 3]].tolist(), [0, 3])

    def test_answer_clause_adds_unanimous_positions(self):
        sample_set = SampleSet.from_sequences(
            [[0, 1, 9, 3, 8], [0, 2, 9, 4, 7], [1, 3, 9, 5, 6]],
            answers("a", "a", "b"),
        )
        params = ConsistencyParams(tau_frac=1.0, min_agree=3)
        plan = compute_remask_mask(sample_set, params)
        # token clause keeps only position 2; the two "a" samples also agree at 0
        self.assertEqual(plan.mask.tolist(), [False, True, False, True, True])
        self.assertEqual(plan.tokens[0], 0)

    def test_answer_clause_needs_strict_dominance(self):
        sample_set = SampleSet.from_sequences([[0, 1], [0, 2], [3, 4], [3, 5]], answers("a", "a", "b", "c"))
        params = ConsistencyParams(tau_frac=1.0, min_agree=4)
        self.assertTrue(compute_remask_mask(sample_set, params).mask.all())

    def test_answer_retention_can_be_disabled(self):
        sample_set = SampleSet.from_sequences([[0, 1], [0, 2], [1, 3]], answers("a", "a", "b"))
        params = ConsistencyParams(tau_frac=1.0, min_agree=3, answer_retention=False)
        self.assertTrue(compute_remask_mask(sample_set, params).mask.all())

    def test_single_sample_retains_nothing(self):
        sample_set = SampleSet.from_sequences([[0, 1, 2]], answers("a"))
        self.assertTrue(compute_remask_mask(sample_set, ConsistencyParams()).mask.all())

    def test_sample_order_does_not_matter(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            samples = rng.integers(0, 3, size=(5, 12))
            values = answers(*[str(v) for v in rng.integers(0, 3, size=5)])
            params = ConsistencyParams(tau_frac=0.4)
            plan = compute_remask_mask(SampleSet(samples, tuple(values)), params)
            order = rng.permutation(5)
            shuffled = compute_remask_mask(SampleSet(samples[order], tuple(values[i] for i in order)), params)
            np.testing.assert_array_equal(plan.mask, shuffled.mask)
            np.testing.assert_array_equal(plan.tokens[~plan.mask], shuffled.tokens[~shuffled.mask])

    def test_token_agreement_ties_to_lowest_id(self):
        agreement = token_agreement(SampleSet.from_sequences([[2], [1]], answers("a", "b")))
        self.assertEqual(agreement.tokens.tolist(), [1])
        self.assertEqual(agreement.counts.tolist(), [1])


class StopRuleTests(SimpleTestCase):
    def test_answer_stop(self):
        self.assertTrue(check_answer_stop(answers("a", "a"), 2))
        self.assertFalse(check_answer_stop(answers("a", "b"), 2))
        self.assertFalse(check_answer_stop(answers("a", "a", "b", "b"), 2))
        self.assertTrue(check_answer_stop(answers("a", "a", "b", "b"), 2, require_majority=False))
        self.assertFalse(check_answer_stop(answers(None, None), 2))
        self.assertFalse(check_answer_stop(answers("a", "a", "a"), math.inf))

    def test_token_stop(self):
        agree = SampleSet.from_sequences([[1, 2], [1, 2]], answers("x", "y"))
        differ = SampleSet.from_sequences([[1, 2], [1, 3]], answers("x", "x"))
        self.assertTrue(check_token_stop(agree, ConsistencyParams()))
        self.assertFalse(check_token_stop(differ, ConsistencyParams(answer_retention=False)))

    def test_token_stop_needs_two_samples(self):
        with self.assertRaises(DomainError):
            check_token_stop(SampleSet.from_sequences([[1]], answers("x")), ConsistencyParams())


class ParamsTests(SimpleTestCase):
    def test_validation(self):
        for kwargs in ({"tau_frac": 0.0}, {"min_agree": 1}, {"c_stop": 1}, {"tau_ans": 1.5}, {"k": 0}):
            with self.subTest(kwargs=kwargs), self.assertRaises(ConfigError):
                ConsistencyParams(**kwargs)

    def test_serializer_accepts_infinite_stop(self):
        params = build_consistency_params({"c_stop": "inf", "min_agree": 3})
        self.assertTrue(math.isinf(params.c_stop))
        self.assertEqual(params.min_agree, 3)

    def test_serializer_rejects_fractional_stop(self):
        with self.assertRaises(ConfigError):
            build_consistency_params({"c_stop": 2.5})
