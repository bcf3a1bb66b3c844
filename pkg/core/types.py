from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from core.exceptions import DomainError


@dataclass(frozen=True)
class VocabSpec:
    """Dense token ids ``[0, size)``; the mask token is ``size`` itself."""

    size: int

    def __post_init__(self):
        if self.size < 2:
            raise DomainError(f"vocabulary needs at least 2 tokens, got {self.size}")

    @property
    def mask_id(self) -> int:
        return self.size


class MaskedSequence:
    """A prompt followed by ``L`` generation slots, each committed or masked.

    Masked slots hold ``vocab.mask_id``. Slots only ever move between the
    masked and committed states; a committed id is never rewritten in place.
    """

    def __init__(self, vocab: VocabSpec, prompt: Sequence[int], gen: Sequence[int]):
        self.vocab = vocab
        self.prompt = tuple(int(t) for t in prompt)
        self.gen = np.asarray(gen, dtype=np.int64).copy()
        if self.gen.ndim != 1 or self.gen.size < 1:
            raise DomainError("generation length must be a positive integer")
        for t in self.prompt:
            if not 0 <= t < vocab.size:
                raise DomainError(f"prompt token {t} outside [0, {vocab.size})")
        if ((self.gen < 0) | (self.gen > vocab.mask_id)).any():
            raise DomainError(f"generation tokens must lie in [0, {vocab.size}] (mask = {vocab.mask_id})")

    @classmethod
    def fully_masked(cls, vocab: VocabSpec, prompt: Sequence[int], length: int) -> "MaskedSequence":
        return cls(vocab, prompt, np.full(length, vocab.mask_id, dtype=np.int64))

    @classmethod
    def from_tokens(cls, vocab: VocabSpec, prompt: Sequence[int], gen: Sequence[int]) -> "MaskedSequence":
        return cls(vocab, prompt, gen)

    @property
    def length(self) -> int:
        return int(self.gen.size)

    @property
    def prompt_length(self) -> int:
        return len(self.prompt)

    def is_masked(self, position: int) -> bool:
        return int(self.gen[position]) == self.vocab.mask_id

    def masked_positions(self, start: int = 0, end: int = None) -> List[int]:
        end = self.length if end is None else end
        window = self.gen[start:end]
        return [start + int(i) for i in np.flatnonzero(window == self.vocab.mask_id)]

    def mask_count(self) -> int:
        return int((self.gen == self.vocab.mask_id).sum())

    def is_complete(self) -> bool:
        return self.mask_count() == 0

    def commit(self, position: int, token: int) -> None:
        if not self.is_masked(position):
            raise DomainError(f"position {position} is already committed")
        if not 0 <= token < self.vocab.size:
            raise DomainError(f"token {token} outside [0, {self.vocab.size})")
        self.gen[position] = token

    def remask(self, position: int) -> None:
        if self.is_masked(position):
            raise DomainError(f"position {position} is already masked")
        self.gen[position] = self.vocab.mask_id

    def tokens(self) -> np.ndarray:
        """Prompt and generation as one array, masks encoded as ``mask_id``."""
        return np.concatenate([np.asarray(self.prompt, dtype=np.int64), self.gen])

    def copy(self) -> "MaskedSequence":
        return MaskedSequence(self.vocab, self.prompt, self.gen)

    def __eq__(self, other):
        if not isinstance(other, MaskedSequence):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and self.prompt == other.prompt
            and np.array_equal(self.gen, other.gen)
        )

    def __repr__(self):
        gen = " ".join("_" if t == self.vocab.mask_id else str(t) for t in self.gen.tolist())
        return f"MaskedSequence(prompt={list(self.prompt)}, gen=[{gen}])"


@dataclass(frozen=True)
class BlockSchedule:
    block_size: int
    blocks: Tuple[range, ...]

    @property
    def length(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)


def make_schedule(length: int, block_size: int) -> BlockSchedule:
    """Split ``[0, length)`` into left-to-right blocks of ``block_size``.

    The last block is shorter when ``block_size`` does not divide ``length``;
    a block size larger than the length gives a single block.
    """
    if length < 1 or block_size < 1:
        raise DomainError(f"schedule needs L >= 1 and B >= 1, got L={length}, B={block_size}")
    blocks = tuple(range(start, min(start + block_size, length)) for start in range(0, length, block_size))
    return BlockSchedule(block_size=block_size, blocks=blocks)


@dataclass
class StepLedger:
    """Counts denoiser forward calls, the unit of every reported step figure."""

    forwards: int = 0
    per_sample: List[int] = field(default_factory=list)

    def begin_sample(self) -> None:
        self.per_sample.append(0)

    def record_forward(self) -> None:
        if not self.per_sample:
            self.per_sample.append(0)
        self.per_sample[-1] += 1
        self.forwards += 1
