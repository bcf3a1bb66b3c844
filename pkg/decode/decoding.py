"""Semi-autoregressive decoding with entropy-threshold parallel commits.

Blocks are decoded left to right. Inside a block every denoiser call scores
all still-masked positions of the block, and the commit rule picks which of
them to fill:

- ``entropy``: every position whose entropy is strictly below ``alpha``;
  when none qualifies, the single lowest-entropy position;
- ``full_steps``: the single lowest-entropy position (N steps);
- ``half_steps``: the two lowest-entropy positions (N/2 steps).
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Set

import numpy as np

from core.config import (
    GenerationConfig,
    STRATEGY_ENTROPY,
    STRATEGY_FULL_STEPS,
    STRATEGY_HALF_STEPS,
)
from core.exceptions import DomainError
from core.types import BlockSchedule, MaskedSequence, StepLedger
from denoiser.denoisers import Denoiser
from denoiser.distributions import DistributionSet, top_p_filter

logger = logging.getLogger(__name__)

TOKENS_PER_STEP = {STRATEGY_FULL_STEPS: 1, STRATEGY_HALF_STEPS: 2}


@dataclass(frozen=True)
class CommitDecision:
    position: int
    token: int
    entropy: float
    step_index: int


def shannon_entropy(dist) -> float:
    """Entropy in nats, with 0 * ln 0 taken as 0."""
    dist = np.asarray(dist, dtype=np.float64)
    nonzero = dist[dist > 0]
    return float(max(0.0, -(nonzero * np.log(nonzero)).sum()))


def _ranked(dists: DistributionSet):
    """(entropy, position) pairs sorted by entropy, then by position."""
    return sorted((shannon_entropy(dist), position) for position, dist in dists.items())


def select_commit_set(dists: DistributionSet, alpha: float) -> Set[int]:
    if len(dists) == 0:
        raise DomainError("select_commit_set needs at least one distribution")
    ranked = _ranked(dists)
    chosen = {position for entropy, position in ranked if entropy < alpha}
    if not chosen:
        chosen = {ranked[0][1]}
    return chosen


def select_lowest_entropy(dists: DistributionSet, count: int) -> Set[int]:
    if len(dists) == 0:
        raise DomainError("select_lowest_entropy needs at least one distribution")
    return {position for _, position in _ranked(dists)[:count]}


def _select(dists: DistributionSet, cfg: GenerationConfig) -> Set[int]:
    if cfg.strategy == STRATEGY_ENTROPY:
        return select_commit_set(dists, cfg.alpha)
    return select_lowest_entropy(dists, TOKENS_PER_STEP[cfg.strategy])


def _draw(dist: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    if temperature == 0:
        return int(np.argmax(dist))
    cumulative = np.cumsum(dist)
    token = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(token, dist.size - 1)


def decode_sequence(
    seq: MaskedSequence,
    schedule: BlockSchedule,
    cfg: GenerationConfig,
    denoiser: Denoiser,
    rng: np.random.Generator,
    ledger: StepLedger,
    trace: Optional[List[CommitDecision]] = None,
) -> MaskedSequence:
    """Fill every masked generation slot of ``seq`` and return the completed copy.

    Committed slots (retained tokens) are never touched. Each denoiser call
    is charged to ``ledger`` and commits at least one token, so a sequence
    with m masked slots costs at most m calls; blocks without masks cost
    nothing.
    """
    if schedule.length != seq.length:
        raise DomainError(f"schedule covers {schedule.length} positions, sequence has {seq.length}")
    out = seq.copy()
    step_index = 0
    for block in schedule:
        while True:
            masked = out.masked_positions(block.start, block.stop)
            if not masked:
                break
            dists = denoiser.predict(out, masked, cfg.temperature)
            ledger.record_forward()
            if cfg.top_p is not None:
                dists = DistributionSet(dists.positions, np.stack([top_p_filter(d, cfg.top_p) for d in dists.probs]))
            chosen = _select(dists, cfg)
            for position in sorted(chosen):
                dist = dists[position]
                token = _draw(dist, cfg.temperature, rng)
                out.commit(position, token)
                if trace is not None:
                    trace.append(CommitDecision(position, token, shannon_entropy(dist), step_index))
            logger.debug(
                "block [%d, %d) step %d committed %d of %d masked",
                block.start, block.stop, step_index, len(chosen), len(masked),
            )
            step_index += 1
    return out
