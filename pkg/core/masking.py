import numpy as np

from core.exceptions import DomainError
from core.types import MaskedSequence


def mask_sequence(x0: MaskedSequence, t: float, rng: np.random.Generator) -> MaskedSequence:
    """Forward corruption: mask each generation slot independently with probability ``t``.

    The prompt is never touched. Only used to build fixtures; decoding always
    starts from fully masked blocks.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"masking intensity must lie in [0, 1], got {t}")
    if not x0.is_complete():
        raise DomainError("mask_sequence expects a fully committed sequence")
    noised = x0.copy()
    hits = rng.random(x0.length) < t
    noised.gen[hits] = x0.vocab.mask_id
    return noised
