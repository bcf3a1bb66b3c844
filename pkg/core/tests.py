import math

import numpy as np
from django.test import SimpleTestCase, TestCase
from rest_framework.test import APIClient
from unittest import mock

from core.config import GenerationConfig, default_block_size
from core.exceptions import ConfigError, DomainError
from core.masking import mask_sequence
from core.seeding import derive_seed, make_rng, stable_hash
from core.serializers import build_generation_config
from core.types import MaskedSequence, StepLedger, VocabSpec, make_schedule


class VocabAndSequenceTests(SimpleTestCase):
    def test_mask_id_is_vocab_size(self):
        self.assertEqual(VocabSpec(5).mask_id, 5)

    def test_vocab_needs_two_tokens(self):
        with self.assertRaises(DomainError):
            VocabSpec(1)

    def test_commit_and_remask(self):
        vocab = VocabSpec(3)
        seq = MaskedSequence.fully_masked(vocab, [0, 2], 4)
        self.assertEqual(seq.masked_positions(), [0, 1, 2, 3])
        seq.commit(1, 2)
        self.assertEqual(seq.masked_positions(0, 2), [0])
        self.assertEqual(seq.mask_count(), 3)
        with self.assertRaises(DomainError):
            seq.commit(1, 0)
        seq.remask(1)
        self.assertTrue(seq.is_masked(1))
        with self.assertRaises(DomainError):
            seq.remask(1)

    def test_commit_rejects_mask_token(self):
        seq = MaskedSequence.fully_masked(VocabSpec(3), [], 2)
        with self.assertRaises(DomainError):
            seq.commit(0, 3)

    def test_tokens_joins_prompt_and_generation(self):
        seq = MaskedSequence.from_tokens(VocabSpec(3), [1], [3, 0])
        self.assertEqual(seq.tokens().tolist(), [1, 3, 0])

    def test_copy_is_independent(self):
        seq = MaskedSequence.fully_masked(VocabSpec(2), [], 3)
        other = seq.copy()
        other.commit(0, 1)
        self.assertTrue(seq.is_masked(0))
        self.assertNotEqual(seq, other)

    def test_prompt_tokens_must_be_in_vocab(self):
        with self.assertRaises(DomainError):
            MaskedSequence.fully_masked(VocabSpec(2), [2], 3)


class ScheduleTests(SimpleTestCase):
    def test_even_split(self):
        schedule = make_schedule(8, 4)
        self.assertEqual([list(b) for b in schedule], [[0, 1, 2, 3], [4, 5, 6, 7]])

    def test_short_last_block(self):
        schedule = make_schedule(10, 4)
        self.assertEqual([len(b) for b in schedule], [4, 4, 2])
        self.assertEqual(schedule.length, 10)

    def test_block_larger_than_length(self):
        self.assertEqual(len(make_schedule(3, 8)), 1)

    def test_blocks_partition_every_length(self):
        for length in range(1, 65):
            for block_size in range(1, 65):
                blocks = list(make_schedule(length, block_size))
                self.assertEqual([i for b in blocks for i in b], list(range(length)))
                self.assertTrue(all(len(b) == block_size for b in blocks[:-1]))
                self.assertTrue(1 <= len(blocks[-1]) <= block_size)

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            make_schedule(0, 4)
        with self.assertRaises(DomainError):
            make_schedule(4, 0)


class StepLedgerTests(SimpleTestCase):
    def test_counts_per_sample(self):
        ledger = StepLedger()
        ledger.begin_sample()
        ledger.record_forward()
        ledger.record_forward()
        ledger.begin_sample()
        ledger.record_forward()
        self.assertEqual(ledger.forwards, 3)
        self.assertEqual(ledger.per_sample, [2, 1])


class GenerationConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = GenerationConfig()
        self.assertEqual(cfg.block_size, 8)
        self.assertEqual(cfg.temperature, 0.6)
        self.assertEqual(cfg.max_samples, 5)

    def test_default_block_sizes(self):
        self.assertEqual(default_block_size(256), 16)
        self.assertEqual(default_block_size(512), 32)
        self.assertEqual(default_block_size(40), 2)
        self.assertEqual(default_block_size(5), 1)

    def test_invalid_values(self):
        for changes in ({"alpha": -0.1}, {"temperature": -1.0}, {"max_samples": 0}, {"tau_frac": 0.0},
                        {"stop_count": 1}, {"strategy": "greedy"}, {"top_p": 1.5}):
            with self.subTest(changes=changes), self.assertRaises(ConfigError):
                GenerationConfig(**changes)

    def test_snapshot_spells_infinite_alpha(self):
        snapshot = GenerationConfig(alpha=math.inf).snapshot()
        self.assertEqual(snapshot["alpha"], "inf")
        self.assertEqual(snapshot["step_unit"], "denoiser_forward_call")

    def test_serializer_builds_config(self):
        cfg = build_generation_config({"gen_len": 16, "alpha": "inf", "temperature": "0"})
        self.assertEqual(cfg.gen_len, 16)
        self.assertEqual(cfg.block_size, 1)
        self.assertTrue(math.isinf(cfg.alpha))
        self.assertEqual(cfg.temperature, 0.0)

    def test_serializer_reports_every_bad_field(self):
        with self.assertRaises(ConfigError) as ctx:
            build_generation_config({"alpha": "-1", "max_samples": 0})
        self.assertIn("alpha", str(ctx.exception))
        self.assertIn("max_samples", str(ctx.exception))


class SeedingTests(SimpleTestCase):
    def test_stable_hash_is_fixed(self):
        self.assertEqual(stable_hash("q1"), stable_hash("q1"))
        self.assertNotEqual(stable_hash("q1"), stable_hash("q2"))

    def test_derive_seed_xors_keys(self):
        self.assertEqual(derive_seed(7, "a"), 7 ^ stable_hash("a"))
        self.assertEqual(derive_seed(7), 7)

    def test_make_rng_is_reproducible(self):
        self.assertEqual(make_rng(3, "x").random(), make_rng(3, "x").random())


class MaskingTests(SimpleTestCase):
    def setUp(self):
        self.x0 = MaskedSequence.from_tokens(VocabSpec(4), [1], [0, 1, 2, 3, 0, 1, 2, 3])

    def test_extremes(self):
        rng = np.random.default_rng(0)
        self.assertEqual(mask_sequence(self.x0, 0.0, rng), self.x0)
        self.assertEqual(mask_sequence(self.x0, 1.0, rng).mask_count(), 8)

    def test_prompt_untouched(self):
        noised = mask_sequence(self.x0, 0.5, np.random.default_rng(1))
        self.assertEqual(noised.prompt, (1,))
        for i in range(8):
            if not noised.is_masked(i):
                self.assertEqual(noised.gen[i], self.x0.gen[i])

    def test_mask_count_is_binomial(self):
        x0 = MaskedSequence.from_tokens(VocabSpec(4), [], np.arange(1000) % 4)
        counts = np.array([mask_sequence(x0, 0.5, make_rng(seed)).mask_count() for seed in range(200)])
        standard_error = math.sqrt(1000 * 0.5 * 0.5 / len(counts))
        self.assertLess(abs(counts.mean() - 500), 3 * standard_error)
        self.assertAlmostEqual(counts.mean() / 1000, 0.5, delta=0.02)

    def test_committing_the_originals_restores_the_sequence(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            x0 = MaskedSequence.from_tokens(VocabSpec(5), [2, 3], rng.integers(0, 5, size=12))
            noised = mask_sequence(x0, float(rng.random()), rng)
            for position in noised.masked_positions():
                noised.commit(position, int(x0.gen[position]))
            self.assertEqual(noised, x0)

    def test_out_of_range_intensity(self):
        with self.assertRaises(DomainError):
            mask_sequence(self.x0, 1.5, np.random.default_rng(0))


class HealthCheckTests(TestCase):
    def setUp(self):
        self.client = APIClient()

    def test_healthy_without_remote(self):
        with self.settings(DVOTE_DENOISER_URL=""):
            response = self.client.get('/health/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data['status'], 'healthy')
        self.assertEqual(response.data['services']['remote_denoiser']['status'], 'skipped')

    def test_degraded_when_remote_is_down(self):
        with self.settings(DVOTE_DENOISER_URL="http://denoiser.invalid"), \
                mock.patch('core.views.requests.get', return_value=mock.Mock(status_code=500)):
            response = self.client.get('/health/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data['status'], 'degraded')
