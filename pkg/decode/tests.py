import math
from collections import Counter

import numpy as np
from django.test import SimpleTestCase

from core.config import GenerationConfig
from core.exceptions import DomainError
from core.types import MaskedSequence, StepLedger, VocabSpec, make_schedule
from decode.decoding import (
    decode_sequence,
    select_commit_set,
    select_lowest_entropy,
    shannon_entropy,
)
from denoiser.denoisers import Denoiser, ExactMarkovDenoiser, UniformDenoiser
from denoiser.distributions import DistributionSet, apply_temperature
from denoiser.markov import MarkovSpec, exact_conditionals


class FixedDenoiser(Denoiser):
    """Serves the same distribution for every position and counts its calls."""

    def __init__(self, dist):
        self.dist = np.asarray(dist, dtype=np.float64)
        self.vocab = VocabSpec(self.dist.size)
        self.calls = 0

    def conditionals(self, seq, positions, temperature):
        self.calls += 1
        return np.tile(self.dist, (len(positions), 1))


class PositionalDenoiser(Denoiser):
    """A fixed distribution per generation slot, whatever the context."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)
        self.vocab = VocabSpec(self.table.shape[1])

    def conditionals(self, seq, positions, temperature):
        return self.table[list(positions)]


def decode(seq, cfg, denoiser, seed=0, trace=None):
    ledger = StepLedger()
    ledger.begin_sample()
    out = decode_sequence(seq, make_schedule(seq.length, cfg.block_size), cfg, denoiser,
                          np.random.default_rng(seed), ledger, trace)
    return out, ledger


def reference_decode(spec, prompt, length, block, alpha, temperature, seed):
    """Straight-line rerun of the commit rules, drawing tokens with the same RNG calls."""
    rng = np.random.default_rng(seed)
    gen = [None] * length
    steps = 0
    for start in range(0, length, block):
        span = range(start, min(start + block, length))
        while any(gen[i] is None for i in span):
            masked = [i for i in span if gen[i] is None]
            seq = MaskedSequence(spec.vocab, prompt, [spec.size if t is None else t for t in gen])
            probs = apply_temperature(exact_conditionals(spec, seq, masked).probs, temperature)
            steps += 1
            entropies = [shannon_entropy(row) for row in probs]
            chosen = [i for i, h in zip(masked, entropies) if h < alpha]
            if not chosen:
                chosen = [min(zip(entropies, masked))[1]]
            for i in sorted(chosen):
                row = probs[masked.index(i)]
                target = rng.random() * float(np.cumsum(row)[-1])
                running, token = 0.0, len(row) - 1
                for candidate, p in enumerate(row):
                    running += p
                    if running > target:
                        token = candidate
                        break
                gen[i] = token
    return gen, steps


class EntropyTests(SimpleTestCase):
    def test_uniform_and_one_hot(self):
        self.assertAlmostEqual(shannon_entropy([0.25] * 4), math.log(4))
        self.assertEqual(shannon_entropy([0.0, 1.0, 0.0]), 0.0)

    def test_nats(self):
        self.assertAlmostEqual(shannon_entropy([0.9, 0.1]), 0.3251, places=4)

    def test_tempered_distribution(self):
        tempered = apply_temperature(np.array([0.8, 0.2]), 0.5)
        np.testing.assert_allclose(tempered, [0.9412, 0.0588], atol=1e-4)
        self.assertLess(shannon_entropy(tempered), shannon_entropy([0.8, 0.2]))


class CommitSetTests(SimpleTestCase):
    def setUp(self):
        self.dists = DistributionSet((0, 1, 2), [[0.5, 0.5], [0.9, 0.1], [0.99, 0.01]])

    def test_threshold_is_strict(self):
        entropy = shannon_entropy([0.9, 0.1])
        self.assertEqual(select_commit_set(self.dists, entropy), {2})
        self.assertEqual(select_commit_set(self.dists, entropy + 1e-12), {1, 2})

    def test_infinite_alpha_commits_all(self):
        self.assertEqual(select_commit_set(self.dists, math.inf), {0, 1, 2})

    def test_zero_alpha_falls_back_to_lowest_entropy(self):
        self.assertEqual(select_commit_set(self.dists, 0.0), {2})

    def test_fallback_ties_go_to_lowest_position(self):
        dists = DistributionSet((4, 1, 3), [[0.5, 0.5]] * 3)
        self.assertEqual(select_commit_set(dists, 0.1), {1})

    def test_empty_set_is_rejected(self):
        with self.assertRaises(DomainError):
            select_commit_set(DistributionSet((), np.empty((0, 2))), 0.3)

    def test_lowest_entropy_pairs(self):
        self.assertEqual(select_lowest_entropy(self.dists, 2), {1, 2})
        self.assertEqual(select_lowest_entropy(self.dists, 5), {0, 1, 2})


class DecodeBoundaryLawTests(SimpleTestCase):
    def random_case(self, rng):
        size = int(rng.integers(2, 6))
        length = int(rng.integers(1, 25))
        block = int(rng.integers(1, 9))
        seq = MaskedSequence.fully_masked(VocabSpec(size), rng.integers(0, size, size=int(rng.integers(0, 4))), length)
        for position in range(length):
            if rng.random() < 0.3:
                seq.commit(position, int(rng.integers(0, size)))
        return seq, block

    def test_infinite_alpha_costs_one_step_per_non_empty_block(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            seq, block = self.random_case(rng)
            cfg = GenerationConfig(gen_len=seq.length, block_size=block, alpha=math.inf, temperature=1.0)
            schedule = make_schedule(seq.length, block)
            expected = sum(1 for b in schedule if seq.masked_positions(b.start, b.stop))
            out, ledger = decode(seq, cfg, UniformDenoiser(seq.vocab))
            self.assertEqual(ledger.forwards, expected)
            self.assertTrue(out.is_complete())

    def test_zero_alpha_costs_one_step_per_masked_position(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            seq, block = self.random_case(rng)
            cfg = GenerationConfig(gen_len=seq.length, block_size=block, alpha=0.0, temperature=1.0)
            out, ledger = decode(seq, cfg, UniformDenoiser(seq.vocab))
            self.assertEqual(ledger.forwards, seq.mask_count())
            self.assertTrue(out.is_complete())

    def test_every_step_commits_and_committed_tokens_survive(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            seq, block = self.random_case(rng)
            spec = MarkovSpec.random(seq.vocab.size, rng, sharpness=0.5)
            cfg = GenerationConfig(
                gen_len=seq.length, block_size=block, alpha=float(rng.choice([0.0, 0.3, 1.0, math.inf])),
                temperature=float(rng.choice([0.0, 0.6, 1.0])),
            )
            trace = []
            out, ledger = decode(seq, cfg, ExactMarkovDenoiser(spec), seed=int(rng.integers(1000)), trace=trace)
            per_step = Counter(decision.step_index for decision in trace)
            self.assertEqual(sorted(per_step), list(range(ledger.forwards)))
            self.assertTrue(all(count >= 1 for count in per_step.values()))
            self.assertEqual(len(trace), seq.mask_count())
            for position in range(seq.length):
                if not seq.is_masked(position):
                    self.assertEqual(out.gen[position], seq.gen[position])

    def test_matches_reference_simulation(self):
        spec = MarkovSpec.from_params({"vocab": 3, "seed": 21, "sharpness": 1.0})
        cfg = GenerationConfig(gen_len=8, block_size=4, alpha=0.3, temperature=0.6)
        for seed in range(5):
            seq = MaskedSequence.fully_masked(spec.vocab, [2], 8)
            out, ledger = decode(seq, cfg, ExactMarkovDenoiser(spec), seed=seed)
            tokens, steps = reference_decode(spec, [2], 8, 4, 0.3, 0.6, seed)
            self.assertEqual(out.gen.tolist(), tokens)
            self.assertEqual(ledger.forwards, steps)

    def test_raising_alpha_never_adds_steps(self):
        alphas = (0.0, 0.05, 0.2, 0.5, 0.8, 1.2, math.inf)
        rng = np.random.default_rng(14)
        for _ in range(30):
            length, block = int(rng.integers(1, 20)), int(rng.integers(1, 9))
            table = rng.dirichlet(np.full(4, 0.5), size=length)
            spec = MarkovSpec.random(4, rng, sharpness=0.5)
            seed = int(rng.integers(1000))
            for denoiser, temperature in ((PositionalDenoiser(table), 1.0), (ExactMarkovDenoiser(spec), 0.0)):
                steps = []
                for alpha in alphas:
                    cfg = GenerationConfig(gen_len=length, block_size=block, alpha=alpha, temperature=temperature)
                    _, ledger = decode(MaskedSequence.fully_masked(VocabSpec(4), [1], length), cfg, denoiser, seed=seed)
                    steps.append(ledger.forwards)
                self.assertEqual(steps, sorted(steps, reverse=True))

    def test_blocks_finish_left_to_right(self):
        cfg = GenerationConfig(gen_len=8, block_size=4, alpha=0.3, temperature=1.0)
        trace = []
        decode(MaskedSequence.fully_masked(VocabSpec(3), [], 8), cfg, UniformDenoiser(VocabSpec(3)), trace=trace)
        positions = [d.position for d in trace]
        self.assertEqual(sorted(positions[:4]), [0, 1, 2, 3])
        self.assertEqual(sorted(positions[4:]), [4, 5, 6, 7])

    def test_input_sequence_is_not_modified(self):
        seq = MaskedSequence.fully_masked(VocabSpec(2), [], 4)
        cfg = GenerationConfig(gen_len=4, block_size=2, temperature=1.0)
        decode(seq, cfg, UniformDenoiser(VocabSpec(2)))
        self.assertEqual(seq.mask_count(), 4)

    def test_schedule_must_cover_sequence(self):
        seq = MaskedSequence.fully_masked(VocabSpec(2), [], 4)
        cfg = GenerationConfig(gen_len=4, block_size=2)
        with self.assertRaises(DomainError):
            decode_sequence(seq, make_schedule(5, 2), cfg, UniformDenoiser(VocabSpec(2)),
                            np.random.default_rng(0), StepLedger())


class StrategyTests(SimpleTestCase):
    def test_full_and_half_steps(self):
        seq = MaskedSequence.fully_masked(VocabSpec(2), [], 7)
        for strategy, expected in (("full_steps", 7), ("half_steps", 4)):
            with self.subTest(strategy=strategy):
                cfg = GenerationConfig(gen_len=7, block_size=8, strategy=strategy, temperature=1.0)
                _, ledger = decode(seq, cfg, UniformDenoiser(VocabSpec(2)))
                self.assertEqual(ledger.forwards, expected)

    def test_half_steps_per_block(self):
        seq = MaskedSequence.fully_masked(VocabSpec(2), [], 6)
        cfg = GenerationConfig(gen_len=6, block_size=3, strategy="half_steps", temperature=1.0)
        _, ledger = decode(seq, cfg, UniformDenoiser(VocabSpec(2)))
        self.assertEqual(ledger.forwards, 4)


class SamplingTests(SimpleTestCase):
    def test_greedy_takes_argmax(self):
        denoiser = FixedDenoiser([0.2, 0.5, 0.3])
        cfg = GenerationConfig(gen_len=5, block_size=5, alpha=math.inf, temperature=0.0)
        out, _ = decode(MaskedSequence.fully_masked(VocabSpec(3), [], 5), cfg, denoiser)
        self.assertEqual(out.gen.tolist(), [1] * 5)

    def test_sampling_follows_distribution(self):
        denoiser = FixedDenoiser([0.7, 0.3])
        cfg = GenerationConfig(gen_len=4000, block_size=4000, alpha=math.inf, temperature=1.0)
        out, ledger = decode(MaskedSequence.fully_masked(VocabSpec(2), [], 4000), cfg, denoiser, seed=5)
        self.assertEqual(ledger.forwards, 1)
        self.assertAlmostEqual(float((out.gen == 0).mean()), 0.7, delta=0.03)

    def test_top_p_removes_tail(self):
        denoiser = FixedDenoiser([0.6, 0.35, 0.05])
        cfg = GenerationConfig(gen_len=500, block_size=500, alpha=math.inf, temperature=1.0, top_p=0.9)
        out, _ = decode(MaskedSequence.fully_masked(VocabSpec(3), [], 500), cfg, denoiser, seed=3)
        self.assertNotIn(2, out.gen.tolist())

    def test_same_seed_same_completion(self):
        spec = MarkovSpec.from_params({"vocab": 4, "seed": 2, "sharpness": 0.5})
        cfg = GenerationConfig(gen_len=16, block_size=4)
        seq = MaskedSequence.fully_masked(spec.vocab, [1], 16)
        first, _ = decode(seq, cfg, ExactMarkovDenoiser(spec), seed=9)
        second, _ = decode(seq, cfg, ExactMarkovDenoiser(spec), seed=9)
        self.assertEqual(first, second)
