from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from core.exceptions import ProtocolError

NORMALIZATION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DistributionSet:
    """One categorical distribution per requested generation position.

    ``probs[i]`` is the distribution of ``positions[i]``.
    """

    positions: Tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2 or probs.shape[0] != len(self.positions):
            raise ProtocolError(
                f"expected {len(self.positions)} distributions, got array of shape {probs.shape}"
            )
        if len(set(self.positions)) != len(self.positions):
            raise ProtocolError("duplicate positions in distribution set")
        if not np.isfinite(probs).all() or (probs < 0).any():
            raise ProtocolError("distributions must be finite and non-negative")
        sums = probs.sum(axis=1)
        if (np.abs(sums - 1.0) > NORMALIZATION_TOLERANCE).any():
            raise ProtocolError(f"distributions must sum to 1, got row sums {sums.tolist()}")

    @property
    def vocab_size(self) -> int:
        return int(self.probs.shape[1])

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, position: int) -> np.ndarray:
        return self.probs[self.positions.index(position)]

    def __contains__(self, position) -> bool:
        return position in self.positions

    def items(self) -> Iterator[Tuple[int, np.ndarray]]:
        return zip(self.positions, self.probs)


def softmax(logits) -> np.ndarray:
    """Softmax over the last axis, natural-log domain."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def apply_temperature(dist, temperature: float) -> np.ndarray:
    """Renormalized ``dist ** (1 / T)`` along the last axis.

    ``T == 1`` is the identity and ``T == 0`` is a one-hot on the argmax,
    ties going to the lowest token id.
    """
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    dist = np.asarray(dist, dtype=np.float64)
    if temperature == 0:
        greedy = np.zeros_like(dist)
        np.put_along_axis(greedy, np.argmax(dist, axis=-1)[..., None], 1.0, axis=-1)
        return greedy
    if temperature == 1:
        return dist.copy()
    with np.errstate(divide="ignore"):
        scaled = np.log(dist) / temperature
    scaled -= scaled.max(axis=-1, keepdims=True)
    weights = np.exp(scaled)
    return weights / weights.sum(axis=-1, keepdims=True)


def top_p_filter(dist, top_p: float) -> np.ndarray:
    """Keep the smallest high-probability set whose mass reaches ``top_p``."""
    dist = np.asarray(dist, dtype=np.float64)
    if top_p >= 1:
        return dist.copy()
    order = np.argsort(-dist, kind="stable")
    cumulative = np.cumsum(dist[order])
    keep = (cumulative - dist[order]) < top_p
    filtered = np.zeros_like(dist)
    filtered[order[keep]] = dist[order[keep]]
    return filtered / filtered.sum()
