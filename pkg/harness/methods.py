"""Method runners: the single-decode baseline, plain majority voting and dVoting."""
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from consistency.metrics import ConsistencyParams, nupr_at_k
from core.config import STRATEGY_FULL_STEPS, STRATEGY_HALF_STEPS, GenerationConfig
from core.exceptions import ConfigError, DenoiserError, DomainError, RunError, TaskError
from core.seeding import derive_seed
from core.types import VocabSpec, make_schedule
from denoiser.denoisers import Denoiser, ExactMarkovDenoiser, PerturbedDenoiser
from denoiser.remote import RemoteDenoiser
from engine.dvoting import RunResult, dvoting_run, majority_voting_run
from harness.taskfile import TaskRecord

logger = logging.getLogger(__name__)

METHOD_BASELINE = "baseline"
METHOD_MAJORITY = "majority"
METHOD_DVOTING = "dvoting"
METHODS = (METHOD_BASELINE, METHOD_MAJORITY, METHOD_DVOTING)

NUPR_KS = (2, 3)

# CLI axis name -> GenerationConfig field
SWEEP_AXES = {"n": "max_samples", "block": "block_size", "block_size": "block_size", "alpha": "alpha"}


class OracleDenoiserFactory:
    """Exact chain oracle of each synthetic task, optionally mixed with uniform noise."""

    def __init__(self, epsilon: float = 0.0, floor: float = 1e-6):
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.epsilon = epsilon
        self.floor = floor

    def __call__(self, task: TaskRecord) -> Denoiser:
        denoiser = ExactMarkovDenoiser(task.markov_spec(), floor=self.floor)
        if self.epsilon:
            return PerturbedDenoiser(denoiser, self.epsilon)
        return denoiser


class RemoteDenoiserFactory:
    """One client per question so concurrent questions use separate connections."""

    def __init__(self, base_url: str, vocab: int, timeout: Optional[float] = None, retries: Optional[int] = None):
        self.base_url = base_url
        self.vocab = VocabSpec(vocab)
        self.timeout = timeout
        self.retries = retries

    def __call__(self, task: TaskRecord) -> Denoiser:
        return RemoteDenoiser(self.base_url, self.vocab, timeout=self.timeout, retries=self.retries)


@dataclass
class QuestionOutcome:
    task_id: str
    method: str
    label: str
    result: RunResult
    correct: bool

    def to_record(self) -> dict:
        record = {
            "id": self.task_id,
            "method": self.method,
            "final_answer": str(self.result.final_answer),
            "correct": self.correct,
            "samples_used": self.result.samples_used,
            "steps": self.result.total_steps,
            "stop_reason": self.result.stop_reason,
            "per_sample_answers": [str(a) for a in self.result.per_sample_answers],
        }
        if self.result.failed_samples:
            record["failed_samples"] = self.result.failed_samples
        if self.label != self.method:
            record["label"] = self.label
        return record

    @property
    def votes(self) -> int:
        return max(Counter(a.vote_key for a in self.result.per_sample_answers).values())

    @property
    def consistency_bin(self) -> str:
        return f"{self.votes}/{self.result.samples_used}"


@dataclass
class MethodReport:
    method: str
    label: str
    accuracy: float
    mean_steps: float
    mean_samples: float
    config: dict
    questions: int
    skipped: int = 0
    bpc: Optional[float] = None
    speedup_vs: Dict[str, float] = field(default_factory=dict)
    consistency_histogram: Dict[str, int] = field(default_factory=dict)
    nupr: Dict[str, Optional[float]] = field(default_factory=dict)
    stop_reasons: Dict[str, int] = field(default_factory=dict)
    outcomes: List[QuestionOutcome] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "method": self.method,
            "label": self.label,
            "accuracy": self.accuracy,
            "mean_steps": self.mean_steps,
            "mean_samples": self.mean_samples,
            "bpc": self.bpc,
            "speedup_vs": dict(self.speedup_vs),
            "config": self.config,
            "questions": self.questions,
            "skipped": self.skipped,
            "consistency_histogram": dict(self.consistency_histogram),
            "nupr": dict(self.nupr),
            "stop_reasons": dict(self.stop_reasons),
        }


def bpc(acc_new: float, acc_base: float, steps_new: float, steps_base: float) -> float:
    """Accuracy gain in points per multiple of the baseline's step count.

    >>> round(bpc(78.24, 70.58, 170.4, 128.0), 2)
    5.75
    """
    if steps_new <= 0 or steps_base <= 0:
        raise DomainError(f"step counts must be positive, got {steps_new} and {steps_base}")
    return (acc_new - acc_base) / (steps_new / steps_base)


def configure_method(method: str, cfg: GenerationConfig) -> GenerationConfig:
    if method == METHOD_BASELINE:
        return cfg.with_changes(strategy=STRATEGY_FULL_STEPS, max_samples=1)
    if method == METHOD_MAJORITY:
        return cfg.with_changes(strategy=STRATEGY_HALF_STEPS)
    if method == METHOD_DVOTING:
        return cfg
    raise ConfigError(f"method must be one of {', '.join(METHODS)}, got {method!r}")


def run_question(
    task: TaskRecord,
    method: str,
    cfg: GenerationConfig,
    cparams: ConsistencyParams,
    denoiser_factory: Callable[[TaskRecord], Denoiser],
    label: Optional[str] = None,
) -> QuestionOutcome:
    """Run one question with its own seed; ``cfg`` must already be configured for ``method``."""
    if task.gen_len is not None and task.gen_len != cfg.gen_len:
        raise TaskError(f"task {task.id!r} was built for gen_len={task.gen_len}, run uses {cfg.gen_len}", [task.line])
    denoiser = denoiser_factory(task)
    schedule = make_schedule(cfg.gen_len, cfg.block_size)
    seed = derive_seed(cfg.seed, task.id)
    if method == METHOD_DVOTING:
        result = dvoting_run(task.prompt, cfg, cparams, denoiser, schedule, task.extractor(), seed=seed)
    else:
        result = majority_voting_run(task.prompt, cfg, denoiser, schedule, task.extractor(), seed=seed)
    answer = result.final_answer
    return QuestionOutcome(
        task_id=task.id,
        method=method,
        label=label or method,
        result=result,
        correct=answer.parseable and answer.value == task.gold.value,
    )


def _mean_nupr(outcomes: Sequence[QuestionOutcome], k: int) -> Optional[float]:
    values = [nupr_at_k(o.result.sample_set(), k) for o in outcomes if o.result.samples_used >= k]
    return sum(values) / len(values) if values else None


def summarize(method, label, cfg, outcomes, skipped, nupr_ks: Sequence[int] = NUPR_KS) -> MethodReport:
    count = len(outcomes)
    return MethodReport(
        method=method,
        label=label,
        accuracy=sum(o.correct for o in outcomes) / count,
        mean_steps=sum(o.result.total_steps for o in outcomes) / count,
        mean_samples=sum(o.result.samples_used for o in outcomes) / count,
        config=cfg.snapshot(),
        questions=count,
        skipped=skipped,
        consistency_histogram=dict(sorted(Counter(o.consistency_bin for o in outcomes).items())),
        nupr={str(k): _mean_nupr(outcomes, k) for k in sorted(set(nupr_ks))},
        stop_reasons=dict(sorted(Counter(o.result.stop_reason for o in outcomes).items())),
        outcomes=list(outcomes),
    )


def run_method(
    tasks: Sequence[TaskRecord],
    method: str,
    cfg: GenerationConfig,
    cparams: ConsistencyParams,
    denoiser_factory: Callable[[TaskRecord], Denoiser],
    jobs: int = 1,
    label: Optional[str] = None,
) -> MethodReport:
    """Run ``method`` on every task, up to ``jobs`` questions at a time.

    Questions that cannot be run are skipped with a warning. Results are
    ordered by task id, so neither ``jobs`` nor the task order changes the
    report.
    """
    tasks = list(tasks)
    if not tasks:
        raise DomainError("run_method needs at least one task")
    label = label or method
    method_cfg = configure_method(method, cfg)
    logger.info("%s: %d tasks, %d jobs, config %s", label, len(tasks), jobs, method_cfg.snapshot())

    def attempt(task):
        try:
            return run_question(task, method, method_cfg, cparams, denoiser_factory, label), None
        except (TaskError, DomainError, DenoiserError, RunError) as e:
            logger.warning("%s: skipping task %r: %s", label, task.id, e)
            return None, e

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        attempts = list(pool.map(attempt, tasks))

    outcomes = sorted((o for o, _ in attempts if o is not None), key=lambda o: o.task_id)
    failures = [e for o, e in attempts if o is None]
    if not outcomes:
        if all(isinstance(e, (DenoiserError, RunError)) for e in failures):
            raise DenoiserError(f"{label}: every task failed in the denoiser; last error: {failures[-1]}")
        raise RunError(f"{label}: all {len(tasks)} tasks were skipped; last error: {failures[-1]}")

    report = summarize(method, label, method_cfg, outcomes, skipped=len(failures), nupr_ks=NUPR_KS + (cparams.k,))
    logger.info(
        "%s: accuracy %.4f, mean steps %.2f, mean samples %.2f over %d questions (%d skipped)",
        label, report.accuracy, report.mean_steps, report.mean_samples, report.questions, report.skipped,
    )
    return report


def attach_comparisons(reports: Sequence[MethodReport]) -> None:
    """Fill ``bpc`` against the first baseline report and ``speedup_vs`` between every pair."""
    baseline = next((r for r in reports if r.method == METHOD_BASELINE), None)
    for report in reports:
        report.speedup_vs = {
            other.label: other.mean_steps / report.mean_steps
            for other in reports
            if other is not report
        }
        if baseline is not None and report is not baseline:
            report.bpc = bpc(100 * report.accuracy, 100 * baseline.accuracy, report.mean_steps, baseline.mean_steps)


def parse_sweep_value(axis: str, raw):
    if axis not in SWEEP_AXES:
        raise DomainError(f"sweep axis must be one of n, block, alpha; got {axis!r}")
    text = str(raw).strip().lower()
    if SWEEP_AXES[axis] == "alpha":
        try:
            value = math.inf if text in ("inf", "infinity") else float(text)
        except ValueError:
            raise DomainError(f"alpha sweep values must be numbers >= 0 or inf, got {raw!r}")
        if math.isnan(value) or value < 0:
            raise DomainError(f"alpha sweep values must be numbers >= 0 or inf, got {raw!r}")
        return value
    try:
        value = int(text)
    except ValueError:
        raise DomainError(f"{axis} sweep values must be positive integers, got {raw!r}")
    if value < 1:
        raise DomainError(f"{axis} sweep values must be positive integers, got {raw!r}")
    return value


def sweep(
    axis: str,
    values: Sequence,
    cfg: GenerationConfig,
    tasks: Sequence[TaskRecord],
    cparams: ConsistencyParams,
    denoiser_factory: Callable[[TaskRecord], Denoiser],
    jobs: int = 1,
) -> List[MethodReport]:
    """One dVoting report per value of ``axis``; every point shares the same seeds."""
    if not values:
        raise DomainError("sweep needs at least one value")
    parsed = [parse_sweep_value(axis, raw) for raw in values]
    reports = []
    for value in parsed:
        point = cfg.with_changes(**{SWEEP_AXES[axis]: value})
        shown = "inf" if isinstance(value, float) and math.isinf(value) else f"{value:g}"
        reports.append(run_method(tasks, METHOD_DVOTING, point, cparams, denoiser_factory, jobs, f"dvoting[{axis}={shown}]"))
    return reports
