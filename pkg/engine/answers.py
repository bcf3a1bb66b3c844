import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from core.exceptions import DomainError

UNPARSEABLE = "unparseable"

ANSWER_NUMERIC = "numeric"
ANSWER_CHOICE = "choice"
ANSWER_STRING = "string"
ANSWER_TYPES = (ANSWER_NUMERIC, ANSWER_CHOICE, ANSWER_STRING)

_WHITESPACE = re.compile(r"\s+")


def canonicalize(value: str, answer_type: str = ANSWER_STRING) -> str:
    """Canonical spelling of an answer; applying it twice changes nothing."""
    text = _WHITESPACE.sub(" ", str(value)).strip().lower()
    if answer_type == ANSWER_NUMERIC:
        sign = ""
        if text[:1] in "+-":
            sign, text = ("-" if text[0] == "-" else ""), text[1:]
        if text.isdigit():
            text = text.lstrip("0") or "0"
            if text == "0":
                sign = ""
        text = sign + text
    return text


@dataclass(frozen=True)
class Answer:
    value: str
    parseable: bool = True

    @classmethod
    def parse(cls, value: str, answer_type: str = ANSWER_STRING) -> "Answer":
        canonical = canonicalize(value, answer_type)
        if not canonical:
            return cls.unparseable()
        return cls(canonical, True)

    @classmethod
    def unparseable(cls) -> "Answer":
        return cls(UNPARSEABLE, False)

    @property
    def vote_key(self) -> str:
        """Value used when counting votes; every unparseable answer counts as one value."""
        return self.value if self.parseable else UNPARSEABLE

    def __str__(self):
        return self.vote_key


def tokens_to_text(tokens: Sequence[int], answer_type: str = ANSWER_STRING) -> Optional[str]:
    """Numeric answers are digit tokens written as one numeral ("4", "2" -> "42").

    A numeric suffix holding an id of 10 or more is not a numeral and gives
    None. Other answer types keep every id, space separated, so suffixes of
    different lengths never share a spelling.
    """
    tokens = [int(t) for t in tokens]
    if answer_type == ANSWER_NUMERIC:
        if not all(0 <= t < 10 for t in tokens):
            return None
        return "".join(str(t) for t in tokens)
    return " ".join(str(t) for t in tokens)


@dataclass(frozen=True)
class AnswerExtractor:
    """Suffix rule mapping a completed generation to an answer.

    With a ``separator`` the answer is the tokens after its last occurrence
    (a missing separator is unparseable); without one it is the tail of the
    generation. ``width`` keeps only that many leading tokens of the suffix.
    """

    separator: Optional[int] = None
    width: Optional[int] = None
    answer_type: str = ANSWER_STRING

    def __call__(self, gen: Sequence[int]) -> Answer:
        return extract_answer(gen, self)


def extract_answer(gen: Sequence[int], extractor: AnswerExtractor) -> Answer:
    tokens = [int(t) for t in gen]
    if extractor.separator is None:
        suffix = tokens if extractor.width is None else tokens[max(0, len(tokens) - extractor.width):]
    else:
        hits = [i for i, t in enumerate(tokens) if t == extractor.separator]
        if not hits:
            return Answer.unparseable()
        suffix = tokens[hits[-1] + 1:]
        if extractor.width is not None:
            suffix = suffix[:extractor.width]
    text = tokens_to_text(suffix, extractor.answer_type) if suffix else None
    if text is None:
        return Answer.unparseable()
    return Answer.parse(text, extractor.answer_type)


def modal_parseable(answers: Sequence[Answer]):
    """(value, count) of the most frequent parseable answer, ties to the smallest value; None if none parse."""
    counts = Counter(a.value for a in answers if a.parseable)
    if not counts:
        return None
    return min(counts.items(), key=lambda item: (-item[1], item[0]))


def majority_vote(answers: Sequence[Answer]) -> Answer:
    """Most frequent parseable answer; ties go to the earliest first occurrence."""
    if not answers:
        raise DomainError("majority_vote needs at least one answer")
    counts = Counter(a.value for a in answers if a.parseable)
    if not counts:
        return answers[0]
    first_seen = {}
    for index, answer in enumerate(answers):
        if answer.parseable:
            first_seen.setdefault(answer.value, index)
    best = min(counts, key=lambda value: (-counts[value], first_seen[value]))
    return Answer(best, True)
