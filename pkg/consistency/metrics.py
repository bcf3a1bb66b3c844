"""Cross-sample agreement: NUPR@k, voting consistency, the remask mask and the stop rules.

Every tie is broken by value (lowest token id, smallest answer string), never
by sample index, so permuting the samples changes no result.
"""
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from core.exceptions import ConfigError, DomainError
from engine.answers import Answer, modal_parseable


@dataclass(frozen=True)
class SampleSet:
    """Completed generations for one prompt (rows) and their extracted answers."""

    samples: np.ndarray
    answers: Tuple[Answer, ...]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.int64)
        if samples.ndim == 1:
            samples = samples[None, :]
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "answers", tuple(self.answers))
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise DomainError(f"samples must be a K x L array, got shape {samples.shape}")
        if len(self.answers) != samples.shape[0]:
            raise DomainError(f"{samples.shape[0]} samples but {len(self.answers)} answers")
        if (samples < 0).any():
            raise DomainError("sample tokens must be non-negative ids")

    @classmethod
    def from_sequences(cls, samples: Sequence[Sequence[int]], answers: Sequence[Answer]) -> "SampleSet":
        return cls(np.asarray([list(s) for s in samples], dtype=np.int64), tuple(answers))

    @property
    def size(self) -> int:
        return int(self.samples.shape[0])

    @property
    def length(self) -> int:
        return int(self.samples.shape[1])


@dataclass(frozen=True)
class ConsistencyParams:
    tau_frac: float = 0.5
    min_agree: int = 2
    k: int = 2
    c_stop: Union[int, float] = 2
    tau_ans: float = 0.5
    answer_retention: bool = True
    require_majority: bool = True

    def __post_init__(self):
        if not 0 < self.tau_frac <= 1:
            raise ConfigError(f"tau_frac must lie in (0, 1], got {self.tau_frac}")
        if self.min_agree < 2:
            raise ConfigError(f"min_agree must be >= 2, got {self.min_agree}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.c_stop < 2:
            raise ConfigError(f"c_stop must be >= 2 (inf disables the answer stop), got {self.c_stop}")
        if not 0 < self.tau_ans <= 1:
            raise ConfigError(f"tau_ans must lie in (0, 1], got {self.tau_ans}")


@dataclass(frozen=True)
class TokenAgreement:
    tokens: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class RemaskPlan:
    """``mask[i]`` True means regenerate position i; otherwise keep ``tokens[i]``."""

    mask: np.ndarray
    tokens: np.ndarray

    @property
    def retained(self) -> int:
        return int((~self.mask).sum())


def token_agreement(sample_set: SampleSet) -> TokenAgreement:
    """Modal token and its count at every position; ties go to the lowest id."""
    samples = sample_set.samples
    vocab = int(samples.max()) + 1
    counts = np.zeros((sample_set.length, vocab), dtype=np.int64)
    for row in samples:
        counts[np.arange(sample_set.length), row] += 1
    modal = np.argmax(counts, axis=1)
    return TokenAgreement(tokens=modal, counts=counts[np.arange(sample_set.length), modal])


def nupr_at_k(sample_set: SampleSet, k: int) -> float:
    """Fraction of positions where at least k of the K samples share a token."""
    if not 1 <= k <= sample_set.size:
        raise DomainError(f"NUPR@k needs 1 <= k <= K={sample_set.size}, got k={k}")
    return float((token_agreement(sample_set).counts >= k).mean())


def voting_consistency_level(answers: Sequence[Answer]) -> float:
    """Share of the votes won by the most frequent answer (unparseable counts as one value)."""
    if not answers:
        raise DomainError("voting consistency needs at least one answer")
    counts = Counter(a.vote_key for a in answers)
    return max(counts.values()) / len(answers)


def retention_threshold(params: ConsistencyParams, size: int) -> int:
    # round() keeps 0.3 * 10 from ceiling to 4
    return max(params.min_agree, math.ceil(round(params.tau_frac * size, 9)))


def compute_remask_mask(sample_set: SampleSet, params: ConsistencyParams) -> RemaskPlan:
    """Which positions the next sample regenerates.

    A position is kept when its modal token reaches
    ``max(min_agree, ceil(tau_frac * K))`` votes. When the modal parseable
    answer holds strictly more than ``tau_ans`` of the votes, positions on
    which all samples giving that answer agree are kept as well.
    """
    size = sample_set.size
    agreement = token_agreement(sample_set)
    retain = agreement.counts >= retention_threshold(params, size)
    tokens = agreement.tokens.copy()

    if params.answer_retention and size >= 2:
        modal = modal_parseable(sample_set.answers)
        if modal is not None and modal[1] / size > params.tau_ans:
            value = modal[0]
            rows = sample_set.samples[[i for i, a in enumerate(sample_set.answers) if a.parseable and a.value == value]]
            unanimous = (rows == rows[0]).all(axis=0)
            added = unanimous & ~retain
            tokens[added] = rows[0][added]
            retain = retain | unanimous

    return RemaskPlan(mask=~retain, tokens=tokens)


def check_answer_stop(answers: Sequence[Answer], c_stop, require_majority: bool = True) -> bool:
    """True once the modal parseable answer has ``c_stop`` votes (and a strict majority)."""
    modal = modal_parseable(answers)
    if modal is None:
        return False
    count = modal[1]
    if count < c_stop:
        return False
    return not require_majority or count > len(answers) / 2


def check_token_stop(sample_set: SampleSet, params: ConsistencyParams) -> bool:
    if sample_set.size < 2:
        raise DomainError("token stop needs at least two samples")
    return not compute_remask_mask(sample_set, params).mask.any()
