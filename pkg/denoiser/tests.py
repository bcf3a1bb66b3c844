import itertools
from unittest import mock

import numpy as np
import requests
from django.test import SimpleTestCase, TestCase, override_settings
from rest_framework.test import APIClient

from core.exceptions import (
    DomainError,
    InconsistentEvidenceError,
    ProtocolError,
    RetryableDenoiserError,
    SpecValidationError,
)
from core.types import MaskedSequence, VocabSpec
from denoiser.denoisers import ExactMarkovDenoiser, PerturbedDenoiser, UniformDenoiser
from denoiser.distributions import DistributionSet, apply_temperature, softmax, top_p_filter
from denoiser.markov import MarkovSpec, exact_conditionals, viterbi
from denoiser.remote import RemoteDenoiser, check_remote
from denoiser.views import LOGIT_FLOOR, served_denoiser


def brute_force_marginals(spec, seq):
    """Marginals at every masked generation slot by enumerating all completions."""
    tokens = seq.tokens()
    mask_id = seq.vocab.mask_id
    free = [i for i, t in enumerate(tokens) if t == mask_id]
    combos = np.array(list(itertools.product(range(spec.size), repeat=len(free))), dtype=np.int64)
    full = np.tile(tokens, (combos.shape[0], 1))
    if free:
        full[:, free] = combos
    weights = spec.initial[full[:, 0]] * np.prod(spec.transition[full[:, :-1], full[:, 1:]], axis=1)
    total = weights.sum()
    marginals = {}
    for i in free:
        dist = np.zeros(spec.size)
        np.add.at(dist, full[:, i], weights)
        marginals[i - seq.prompt_length] = dist / total if total > 0 else dist
    return marginals, total


def brute_force_best(spec, seq):
    tokens = seq.tokens()
    free = [i for i, t in enumerate(tokens) if t == seq.vocab.mask_id]
    best, best_weight = None, -1.0
    for combo in itertools.product(range(spec.size), repeat=len(free)):
        full = tokens.copy()
        full[free] = combo
        weight = spec.initial[full[0]] * np.prod(spec.transition[full[:-1], full[1:]])
        if weight > best_weight:
            best, best_weight = full, weight
    return best[seq.prompt_length:]


class MarkovSpecTests(SimpleTestCase):
    def test_rejects_non_stochastic_rows(self):
        with self.assertRaises(SpecValidationError):
            MarkovSpec(initial=[0.5, 0.5], transition=[[0.5, 0.4], [0.5, 0.5]])

    def test_rejects_negative_entries(self):
        with self.assertRaises(SpecValidationError):
            MarkovSpec(initial=[1.5, -0.5], transition=[[1, 0], [0, 1]])

    def test_rejects_shape_mismatch(self):
        with self.assertRaises(SpecValidationError):
            MarkovSpec(initial=[1, 0, 0], transition=[[1, 0], [0, 1]])

    def test_random_is_seeded(self):
        a = MarkovSpec.from_params({"vocab": 4, "seed": 9, "sharpness": 0.5})
        b = MarkovSpec.from_params({"vocab": 4, "seed": 9, "sharpness": 0.5})
        np.testing.assert_array_equal(a.transition, b.transition)

    def test_smoothed_is_stochastic_and_positive(self):
        spec = MarkovSpec(initial=[1, 0], transition=[[1, 0], [0, 1]]).smoothed(0.1)
        self.assertTrue((spec.transition > 0).all())
        np.testing.assert_allclose(spec.transition.sum(axis=1), 1.0)


class ExactConditionalsTests(SimpleTestCase):
    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(2024)
        checked = 0
        for _ in range(200):
            size = int(rng.integers(2, 4))
            length = int(rng.integers(1, 9))
            prompt = rng.integers(0, size, size=int(rng.integers(0, 3))).tolist()
            spec = MarkovSpec.random(size, rng, sharpness=1.0)
            gen = rng.integers(0, size, size=length)
            gen[rng.random(length) < 0.6] = size
            gen[int(rng.integers(0, length))] = size
            seq = MaskedSequence(VocabSpec(size), prompt, gen)

            expected, total = brute_force_marginals(spec, seq)
            if total <= 0:
                with self.assertRaises(InconsistentEvidenceError):
                    exact_conditionals(spec, seq)
                continue
            dists = exact_conditionals(spec, seq)
            self.assertEqual(list(dists.positions), seq.masked_positions())
            for position, dist in dists.items():
                np.testing.assert_allclose(dist, expected[position], atol=1e-9)
            checked += 1
        self.assertGreater(checked, 150)

    def test_gap_between_two_known_tokens(self):
        spec = MarkovSpec(initial=[0.5, 0.5], transition=[[0.7, 0.3], [0.4, 0.6]])
        seq = MaskedSequence.from_tokens(spec.vocab, [0], [2, 1])
        dists = exact_conditionals(spec, seq)
        self.assertEqual(dists.positions, (0,))
        # 0.7 * 0.3 against 0.3 * 0.6
        np.testing.assert_allclose(dists[0], [0.21 / 0.39, 0.18 / 0.39])
        self.assertAlmostEqual(dists[0][0], 0.5385, places=4)

    def test_requested_positions_keep_order(self):
        spec = MarkovSpec.from_params({"vocab": 3, "seed": 1})
        seq = MaskedSequence.fully_masked(spec.vocab, [0], 4)
        dists = exact_conditionals(spec, seq, [3, 1])
        self.assertEqual(dists.positions, (3, 1))

    def test_impossible_evidence_raises(self):
        spec = MarkovSpec(initial=[1, 0], transition=[[1, 0], [0, 1]])
        seq = MaskedSequence.from_tokens(spec.vocab, [0], [2, 1])
        with self.assertRaises(InconsistentEvidenceError):
            exact_conditionals(spec, seq)


class ViterbiTests(SimpleTestCase):
    def test_matches_brute_force_argmax(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            size = int(rng.integers(2, 4))
            length = int(rng.integers(1, 7))
            spec = MarkovSpec.random(size, rng, sharpness=1.0)
            prompt = rng.integers(0, size, size=2).tolist()
            gen = np.full(length, size)
            if length > 2:
                gen[1] = int(rng.integers(0, size))
            seq = MaskedSequence(VocabSpec(size), prompt, gen)
            completed = viterbi(spec, seq)
            self.assertTrue(completed.is_complete())
            np.testing.assert_array_equal(completed.gen, brute_force_best(spec, seq))


class DistributionTests(SimpleTestCase):
    def test_set_rejects_unnormalized_rows(self):
        with self.assertRaises(ProtocolError):
            DistributionSet((0,), [[0.5, 0.6]])

    def test_set_rejects_duplicate_positions(self):
        with self.assertRaises(ProtocolError):
            DistributionSet((1, 1), [[0.5, 0.5], [0.5, 0.5]])

    def test_temperature_one_is_identity(self):
        dist = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(apply_temperature(dist, 1.0), dist)

    def test_temperature_zero_is_argmax_one_hot(self):
        np.testing.assert_array_equal(apply_temperature(np.array([0.3, 0.3, 0.4]), 0.0), [0, 0, 1])
        np.testing.assert_array_equal(apply_temperature(np.array([0.4, 0.4, 0.2]), 0.0), [1, 0, 0])

    def test_low_temperature_sharpens(self):
        dist = np.array([0.2, 0.8])
        sharp = apply_temperature(dist, 0.5)
        np.testing.assert_allclose(sharp, [0.04 / 0.68, 0.64 / 0.68])

    def test_half_temperature_squares_and_renormalizes(self):
        np.testing.assert_allclose(apply_temperature(np.array([0.8, 0.2]), 0.5), [0.9412, 0.0588], atol=1e-4)

    def test_temperature_keeps_argmax(self):
        rng = np.random.default_rng(8)
        dists = rng.dirichlet(np.ones(6), size=50)
        for temperature in (0.05, 0.3, 0.6, 1.0, 2.0, 10.0):
            with self.subTest(temperature=temperature):
                tempered = apply_temperature(dists, temperature)
                np.testing.assert_array_equal(np.argmax(tempered, axis=1), np.argmax(dists, axis=1))

    def test_softmax(self):
        np.testing.assert_allclose(softmax(np.log([0.25, 0.75])), [0.25, 0.75])

    def test_top_p_keeps_smallest_covering_set(self):
        np.testing.assert_allclose(top_p_filter(np.array([0.5, 0.3, 0.2]), 0.7), [0.625, 0.375, 0.0])
        np.testing.assert_allclose(top_p_filter(np.array([0.5, 0.3, 0.2]), 0.4), [1.0, 0.0, 0.0])


class DenoiserTests(SimpleTestCase):
    def setUp(self):
        self.spec = MarkovSpec.from_params({"vocab": 3, "seed": 4, "sharpness": 1.0})
        self.seq = MaskedSequence.fully_masked(self.spec.vocab, [1], 4)

    def test_predict_rejects_committed_positions(self):
        seq = self.seq.copy()
        seq.commit(0, 1)
        with self.assertRaises(DomainError):
            ExactMarkovDenoiser(self.spec).predict(seq, [0, 1], 1.0)

    def test_predict_is_pure(self):
        seq = self.seq.copy()
        seq.commit(2, 0)
        before = seq.copy()
        for denoiser in (ExactMarkovDenoiser(self.spec), PerturbedDenoiser(ExactMarkovDenoiser(self.spec), 0.2)):
            with self.subTest(denoiser=type(denoiser).__name__):
                first = denoiser.predict(seq, [0, 1, 3], 0.6)
                second = denoiser.predict(seq, [0, 1, 3], 0.6)
                self.assertEqual(first.positions, second.positions)
                np.testing.assert_array_equal(first.probs, second.probs)
                self.assertEqual(seq, before)

    def test_predict_rejects_empty_request(self):
        with self.assertRaises(DomainError):
            ExactMarkovDenoiser(self.spec).predict(self.seq, [], 1.0)

    def test_uniform_ignores_temperature(self):
        seq = MaskedSequence.fully_masked(VocabSpec(4), [], 3)
        dists = UniformDenoiser(VocabSpec(4)).predict(seq, [0, 1], 0.0)
        np.testing.assert_allclose(dists.probs, 0.25)

    def test_exact_denoiser_falls_back_on_impossible_evidence(self):
        spec = MarkovSpec(initial=[1, 0], transition=[[1, 0], [0, 1]])
        seq = MaskedSequence.from_tokens(spec.vocab, [0], [2, 1])
        with self.assertLogs('denoiser.denoisers', level='WARNING'):
            dists = ExactMarkovDenoiser(spec).predict(seq, [0], 1.0)
        self.assertAlmostEqual(dists[0].sum(), 1.0)

    def test_perturbed_mixes_uniform(self):
        spec = MarkovSpec(initial=[1, 0], transition=[[1, 0], [0, 1]])
        seq = MaskedSequence.fully_masked(spec.vocab, [0], 1)
        dists = PerturbedDenoiser(ExactMarkovDenoiser(spec), 0.6).predict(seq, [0], 1.0)
        np.testing.assert_allclose(dists[0], [0.7, 0.3])

    def test_perturbed_rejects_bad_epsilon(self):
        with self.assertRaises(DomainError):
            PerturbedDenoiser(UniformDenoiser(VocabSpec(2)), 1.5)


def fake_response(status_code=200, payload=None):
    response = mock.Mock(status_code=status_code, text="")
    response.json.return_value = payload
    return response


@override_settings(DVOTE_REMOTE_TIMEOUT=1.0, DVOTE_REMOTE_RETRIES=0)
class RemoteDenoiserTests(SimpleTestCase):
    def setUp(self):
        self.vocab = VocabSpec(3)
        self.session = mock.Mock(spec=requests.Session)
        self.client = RemoteDenoiser("http://model:8000/", self.vocab, session=self.session)
        self.seq = MaskedSequence.fully_masked(self.vocab, [2], 2)

    def test_request_body_and_softmax(self):
        self.session.post.return_value = fake_response(payload={"logits": [[0.0, 0.0, 0.0], [0.0, np.log(3.0), 0.0]]})
        dists = self.client.predict(self.seq, [0, 1], 1.0)
        url = self.session.post.call_args.args[0]
        body = self.session.post.call_args.kwargs["json"]
        self.assertEqual(url, "http://model:8000/v1/logits")
        self.assertEqual(body, {"tokens": [2, 3, 3], "masked": [1, 2], "temperature": 1.0})
        np.testing.assert_allclose(dists[0], [1 / 3] * 3)
        np.testing.assert_allclose(dists[1], [0.2, 0.6, 0.2])

    def test_wrong_arity_is_protocol_error(self):
        self.session.post.return_value = fake_response(payload={"logits": [[0.0, 0.0, 0.0]]})
        with self.assertRaises(ProtocolError):
            self.client.predict(self.seq, [0, 1], 1.0)

    def test_wrong_width_is_protocol_error(self):
        self.session.post.return_value = fake_response(payload={"logits": [[0.0, 0.0]]})
        with self.assertRaises(ProtocolError):
            self.client.predict(self.seq, [0], 1.0)

    def test_non_finite_logits_are_protocol_error(self):
        self.session.post.return_value = fake_response(payload={"logits": [[0.0, float("nan"), 0.0]]})
        with self.assertRaises(ProtocolError):
            self.client.predict(self.seq, [0], 1.0)

    def test_http_error_is_protocol_error(self):
        self.session.post.return_value = fake_response(status_code=500)
        with self.assertRaises(ProtocolError):
            self.client.predict(self.seq, [0], 1.0)

    def test_transport_failure_is_retryable(self):
        self.session.post.side_effect = requests.exceptions.ConnectionError("refused")
        with self.assertRaises(RetryableDenoiserError):
            self.client.predict(self.seq, [0], 1.0)

    def test_check_remote_reports_probe(self):
        with mock.patch('requests.Session.post', return_value=fake_response(payload={"logits": [[0, 0, 0], [0, 0, 0]]})):
            report = check_remote("http://model:8000", self.vocab)
        self.assertEqual(report["positions"], [0, 2])
        self.assertEqual(report["vocab"], 3)


@override_settings(DVOTE_SERVED_ORACLE={"transition": [[0.0, 1.0], [1.0, 0.0]], "initial": [1.0, 0.0]})
class LogitsViewTests(TestCase):
    def setUp(self):
        served_denoiser.cache_clear()
        self.addCleanup(served_denoiser.cache_clear)
        self.client = APIClient()

    def test_returns_log_conditionals(self):
        response = self.client.post('/v1/logits', {"tokens": [0, 2, 2], "masked": [1, 2]}, format='json')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data["logits"], [[LOGIT_FLOOR, 0.0], [0.0, LOGIT_FLOOR]])

    def test_rejects_unmasked_positions(self):
        response = self.client.post('/v1/logits', {"tokens": [0, 1, 2], "masked": [1]}, format='json')
        self.assertEqual(response.status_code, 400)

    def test_impossible_evidence_uses_smoothed_chain(self):
        response = self.client.post('/v1/logits', {"tokens": [0, 0, 2], "masked": [2]}, format='json')
        self.assertEqual(response.status_code, 200)

    def test_remote_client_against_served_oracle(self):
        def post(url, json=None, timeout=None):
            answer = self.client.post('/v1/logits', json, format='json')
            return fake_response(status_code=answer.status_code, payload=answer.json())

        session = mock.Mock(spec=requests.Session)
        session.post.side_effect = post
        remote = RemoteDenoiser("http://testserver", VocabSpec(2), session=session)
        seq = MaskedSequence.fully_masked(VocabSpec(2), [0], 2)
        dists = remote.predict(seq, [0, 1], 1.0)
        np.testing.assert_allclose(dists.probs, [[0.0, 1.0], [1.0, 0.0]], atol=1e-12)
