"""Order-1 Markov chain oracle.

The chain runs over the whole token sequence (prompt then generation). Masked
slots are unobserved; committed slots are observed exactly. Conditionals are
computed with a normalized forward-backward pass in O(n * V^2).
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from core.exceptions import InconsistentEvidenceError, SpecValidationError
from core.types import MaskedSequence, VocabSpec
from denoiser.distributions import DistributionSet

STOCHASTIC_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MarkovSpec:
    initial: np.ndarray
    transition: np.ndarray
    answer_map: Optional[object] = field(default=None, compare=False)

    def __post_init__(self):
        initial = np.asarray(self.initial, dtype=np.float64)
        transition = np.asarray(self.transition, dtype=np.float64)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)
        self.validate()

    def validate(self) -> None:
        initial, transition = self.initial, self.transition
        if initial.ndim != 1 or initial.size < 2:
            raise SpecValidationError(f"initial must be a vector over V >= 2 tokens, got shape {initial.shape}")
        size = initial.size
        if transition.shape != (size, size):
            raise SpecValidationError(f"transition must be {size}x{size}, got {transition.shape}")
        if not np.isfinite(initial).all() or not np.isfinite(transition).all():
            raise SpecValidationError("chain probabilities must be finite")
        if (initial < 0).any() or (transition < 0).any():
            raise SpecValidationError("chain probabilities must be non-negative")
        if abs(initial.sum() - 1.0) > STOCHASTIC_TOLERANCE:
            raise SpecValidationError(f"initial sums to {initial.sum()}, not 1")
        row_sums = transition.sum(axis=1)
        bad_rows = np.flatnonzero(np.abs(row_sums - 1.0) > STOCHASTIC_TOLERANCE)
        if bad_rows.size:
            raise SpecValidationError(f"transition rows {bad_rows.tolist()} do not sum to 1")

    @property
    def size(self) -> int:
        return int(self.initial.size)

    @property
    def vocab(self) -> VocabSpec:
        return VocabSpec(self.size)

    def smoothed(self, floor: float) -> "MarkovSpec":
        """Mix every distribution with ``floor`` of uniform mass."""
        uniform = 1.0 / self.size
        return MarkovSpec(
            initial=(1 - floor) * self.initial + floor * uniform,
            transition=(1 - floor) * self.transition + floor * uniform,
            answer_map=self.answer_map,
        )

    @classmethod
    def random(cls, size: int, rng: np.random.Generator, sharpness: float = 0.3, answer_map=None) -> "MarkovSpec":
        """Dirichlet(sharpness) initial vector and rows; small sharpness gives peaky chains."""
        concentration = np.full(size, sharpness)
        initial = rng.dirichlet(concentration)
        transition = rng.dirichlet(concentration, size=size)
        return cls(
            initial=initial / initial.sum(),
            transition=transition / transition.sum(axis=1, keepdims=True),
            answer_map=answer_map,
        )

    @classmethod
    def from_params(cls, params: dict, answer_map=None) -> "MarkovSpec":
        """Build a chain from explicit ``initial``/``transition`` or from ``vocab``/``seed``/``sharpness``."""
        if "transition" in params:
            transition = np.asarray(params["transition"], dtype=np.float64)
            if "initial" in params:
                initial = params["initial"]
            else:
                initial = np.full(transition.shape[0], 1.0 / max(transition.shape[0], 1))
            return cls(initial=initial, transition=transition, answer_map=answer_map)
        rng = np.random.default_rng(int(params.get("seed", 0)))
        return cls.random(int(params["vocab"]), rng, float(params.get("sharpness", 0.3)), answer_map=answer_map)


def _evidence(spec: MarkovSpec, seq: MaskedSequence) -> np.ndarray:
    tokens = seq.tokens()
    evidence = np.ones((tokens.size, spec.size))
    observed = np.flatnonzero(tokens != seq.vocab.mask_id)
    evidence[observed] = 0.0
    evidence[observed, tokens[observed]] = 1.0
    return evidence


def _forward_backward(spec: MarkovSpec, evidence: np.ndarray) -> np.ndarray:
    n = evidence.shape[0]
    forward = np.empty((n, spec.size))
    backward = np.ones((n, spec.size))

    step = spec.initial * evidence[0]
    for t in range(n):
        if t > 0:
            step = (forward[t - 1] @ spec.transition) * evidence[t]
        total = step.sum()
        if total <= 0:
            raise InconsistentEvidenceError(f"committed tokens up to position {t} have zero probability")
        forward[t] = step / total

    for t in range(n - 2, -1, -1):
        step = spec.transition @ (evidence[t + 1] * backward[t + 1])
        backward[t] = step / step.sum()

    posterior = forward * backward
    return posterior / posterior.sum(axis=1, keepdims=True)


def exact_conditionals(spec: MarkovSpec, seq: MaskedSequence, positions: Optional[Sequence[int]] = None) -> DistributionSet:
    """True conditional marginals at masked generation positions given every committed token.

    ``positions`` are generation indices and default to every masked slot.
    """
    spec.validate()
    if seq.vocab.size != spec.size:
        raise SpecValidationError(f"sequence vocabulary {seq.vocab.size} does not match chain size {spec.size}")
    if positions is None:
        positions = seq.masked_positions()
    posterior = _forward_backward(spec, _evidence(spec, seq))
    offset = seq.prompt_length
    rows = posterior[[offset + p for p in positions]] if len(positions) else np.empty((0, spec.size))
    return DistributionSet(tuple(positions), rows)


def viterbi(spec: MarkovSpec, seq: MaskedSequence) -> MaskedSequence:
    """Most probable completion of ``seq`` under the chain; ties go to the lowest token id."""
    evidence = _evidence(spec, seq)
    n = evidence.shape[0]
    with np.errstate(divide="ignore"):
        log_transition = np.log(spec.transition)
        log_evidence = np.log(evidence)
        score = np.log(spec.initial) + log_evidence[0]
    backpointers = np.zeros((n, spec.size), dtype=np.int64)
    for t in range(1, n):
        candidates = score[:, None] + log_transition
        backpointers[t] = np.argmax(candidates, axis=0)
        score = candidates[backpointers[t], np.arange(spec.size)] + log_evidence[t]
    if not np.isfinite(score.max()):
        raise InconsistentEvidenceError("committed tokens have zero probability under the chain")

    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for t in range(n - 1, 0, -1):
        path[t - 1] = backpointers[t, path[t]]
    return MaskedSequence(seq.vocab, seq.prompt, path[seq.prompt_length:])
