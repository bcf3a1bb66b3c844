import abc
import logging
from typing import Sequence

import numpy as np

from core.exceptions import DomainError, InconsistentEvidenceError, ProtocolError
from core.types import MaskedSequence, VocabSpec
from denoiser.distributions import DistributionSet, apply_temperature
from denoiser.markov import MarkovSpec, exact_conditionals

logger = logging.getLogger(__name__)


class Denoiser(abc.ABC):
    """p(x_0^i | x_t) for a set of masked generation positions.

    Implementations return raw conditionals from ``conditionals``; ``predict``
    validates the request, applies the temperature and checks the result.
    One ``predict`` call is one forward pass, however many positions it
    scores.
    """

    vocab: VocabSpec

    @abc.abstractmethod
    def conditionals(self, seq: MaskedSequence, positions: Sequence[int], temperature: float) -> np.ndarray:
        """Untempered distributions, one row per position, in request order."""

    def predict(self, seq: MaskedSequence, positions: Sequence[int], temperature: float) -> DistributionSet:
        positions = [int(p) for p in positions]
        if not positions:
            raise DomainError("predict needs at least one masked position")
        unmasked = [p for p in positions if not seq.is_masked(p)]
        if unmasked:
            raise DomainError(f"positions {unmasked} are not masked")
        probs = np.asarray(self.conditionals(seq, positions, temperature), dtype=np.float64)
        if probs.shape != (len(positions), self.vocab.size):
            raise ProtocolError(
                f"denoiser returned shape {probs.shape}, expected {(len(positions), self.vocab.size)}"
            )
        return DistributionSet(tuple(positions), apply_temperature(probs, temperature))


class UniformDenoiser(Denoiser):
    """Every position uniform over the vocabulary, at any temperature."""

    def __init__(self, vocab: VocabSpec):
        self.vocab = vocab

    def conditionals(self, seq, positions, temperature):
        return np.full((len(positions), self.vocab.size), 1.0 / self.vocab.size)

    def predict(self, seq, positions, temperature):
        return super().predict(seq, positions, 1.0)


class ExactMarkovDenoiser(Denoiser):
    """Exact chain conditionals.

    Retention can combine tokens from different samples into evidence the
    chain cannot produce; those requests are answered by the chain smoothed
    with ``floor`` of uniform mass.
    """

    def __init__(self, spec: MarkovSpec, floor: float = 1e-6):
        self.spec = spec
        self.vocab = spec.vocab
        self.floor = floor
        self._fallback = spec.smoothed(floor)

    def conditionals(self, seq, positions, temperature):
        try:
            return exact_conditionals(self.spec, seq, positions).probs
        except InconsistentEvidenceError as exc:
            logger.warning("oracle evidence impossible (%s); using chain smoothed by %g", exc, self.floor)
            return exact_conditionals(self._fallback, seq, positions).probs


class PerturbedDenoiser(Denoiser):
    """``(1 - epsilon) * p + epsilon * uniform`` over another denoiser's conditionals."""

    def __init__(self, base: Denoiser, epsilon: float):
        if not 0.0 <= epsilon <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.base = base
        self.vocab = base.vocab
        self.epsilon = epsilon

    def conditionals(self, seq, positions, temperature):
        clean = np.asarray(self.base.conditionals(seq, positions, temperature), dtype=np.float64)
        return (1.0 - self.epsilon) * clean + self.epsilon / self.vocab.size
