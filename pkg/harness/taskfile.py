"""Task files: one JSON object per line, validated with ``TaskRecordSerializer``."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from core.exceptions import TaskError
from core.seeding import derive_seed
from core.types import MaskedSequence
from denoiser.markov import MarkovSpec, viterbi
from engine.answers import ANSWER_NUMERIC, ANSWER_STRING, Answer, AnswerExtractor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskRecord:
    id: str
    prompt: Tuple[int, ...]
    gold: Answer
    answer_type: str
    synthetic: Optional[dict] = None
    separator: Optional[int] = None
    answer_width: Optional[int] = None
    line: int = 0

    @property
    def gen_len(self) -> Optional[int]:
        """Generation length the gold answer was computed for, when the task records it."""
        return None if self.synthetic is None else self.synthetic.get("gen_len")

    def markov_spec(self) -> MarkovSpec:
        if self.synthetic is None:
            raise TaskError(f"task {self.id!r} has a literal prompt and no chain to build an oracle from", [self.line])
        return MarkovSpec.from_params(self.synthetic)

    def extractor(self) -> AnswerExtractor:
        return AnswerExtractor(separator=self.separator, width=self.answer_width, answer_type=self.answer_type)


def _record_from(data: dict, line: int) -> TaskRecord:
    from harness.serializers import TaskRecordSerializer

    serializer = TaskRecordSerializer(data=data)
    if not serializer.is_valid():
        raise TaskError(f"line {line}: invalid task: {json.dumps(serializer.errors, sort_keys=True)}", [line])
    valid = serializer.validated_data
    prompt = valid["prompt"]
    extract = valid.get("extract") or {}
    if "synthetic" in prompt:
        synthetic = dict(prompt["synthetic"])
        tokens = synthetic["prompt"]
        separator, width = synthetic["separator"], synthetic["answer_width"]
    else:
        synthetic = None
        tokens = prompt["tokens"]
        separator, width = extract.get("separator"), extract.get("width")
    return TaskRecord(
        id=valid["id"],
        prompt=tuple(tokens),
        gold=Answer.parse(valid["gold"], valid["answer_type"]),
        answer_type=valid["answer_type"],
        synthetic=synthetic,
        separator=separator,
        answer_width=width,
        line=line,
    )


def parse_task_records(items: Iterable[dict], first_line: int = 1) -> List[TaskRecord]:
    """Validate already-decoded task objects; numbering starts at ``first_line``."""
    records = []
    seen = {}
    for line, data in enumerate(items, start=first_line):
        if not isinstance(data, dict):
            raise TaskError(f"line {line}: expected a JSON object", [line])
        record = _record_from(data, line)
        if record.id in seen:
            raise TaskError(
                f"duplicate task id {record.id!r} on lines {seen[record.id]} and {line}", [seen[record.id], line]
            )
        seen[record.id] = line
        records.append(record)
    return records


def ingest_tasks(path) -> List[TaskRecord]:
    """Read and validate a tasks.jsonl file. Blank lines are ignored."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise TaskError(f"cannot read task file {path}: {e}")

    records = []
    seen = {}
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise TaskError(f"line {line}: malformed JSON: {e.msg}", [line])
        record = parse_task_records([data], first_line=line)[0]
        if record.id in seen:
            raise TaskError(
                f"duplicate task id {record.id!r} on lines {seen[record.id]} and {line}", [seen[record.id], line]
            )
        seen[record.id] = line
        records.append(record)
    logger.info("read %d tasks from %s", len(records), path)
    return records


def _sample_prompt(spec: MarkovSpec, length: int, rng: np.random.Generator) -> List[int]:
    tokens = []
    dist = spec.initial
    for _ in range(length):
        token = int(rng.choice(spec.size, p=dist))
        tokens.append(token)
        dist = spec.transition[token]
    return tokens


def synthesize_tasks(
    vocab: int,
    length: int,
    count: int,
    seed: int = 0,
    prompt_len: int = 4,
    sharpness: float = 0.3,
    answer_width: Optional[int] = 2,
    separator: Optional[int] = None,
) -> List[dict]:
    """Synthetic task lines, each with its own random chain.

    The gold answer is read off the most probable completion of the prompt.
    Chains whose best completion has no answer (no separator) are skipped.
    """
    answer_type = ANSWER_NUMERIC if vocab <= 10 else ANSWER_STRING
    extractor = AnswerExtractor(separator=separator, width=answer_width, answer_type=answer_type)
    lines = []
    attempt = 0
    while len(lines) < count:
        if attempt >= 10 * count:
            raise TaskError(f"only {len(lines)} of {count} synthetic tasks have a parseable gold answer")
        chain_seed = derive_seed(seed, "task", attempt) % (2 ** 32)
        attempt += 1
        params = {"vocab": vocab, "seed": chain_seed, "sharpness": sharpness}
        spec = MarkovSpec.from_params(params)
        prompt = _sample_prompt(spec, prompt_len, np.random.default_rng(derive_seed(chain_seed, "prompt")))
        best = viterbi(spec, MaskedSequence.fully_masked(spec.vocab, prompt, length))
        gold = extractor(best.gen)
        if not gold.parseable:
            continue
        lines.append({
            "id": f"synth-{len(lines):05d}",
            "prompt": {"synthetic": {
                **params,
                "prompt": prompt,
                "separator": separator,
                "answer_width": answer_width,
                "gen_len": length,
            }},
            "gold": gold.value,
            "answer_type": answer_type,
        })
    return lines


def write_tasks(lines: Iterable[dict], path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = list(lines)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for item in lines:
            handle.write(json.dumps(item, sort_keys=True) + "\n")
    return len(lines)
