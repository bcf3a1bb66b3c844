import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from consistency.metrics import (
    ConsistencyParams,
    SampleSet,
    check_answer_stop,
    check_token_stop,
    compute_remask_mask,
    voting_consistency_level,
)
from core.config import GenerationConfig
from core.exceptions import DenoiserError, RunError
from core.seeding import make_rng
from core.types import BlockSchedule, MaskedSequence, StepLedger
from decode.decoding import decode_sequence
from denoiser.denoisers import Denoiser
from engine.answers import Answer, AnswerExtractor, majority_vote

logger = logging.getLogger(__name__)

STOP_ANSWER_CONVERGED = "answer_converged"
STOP_TOKEN_CONVERGED = "token_converged"
STOP_BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class RunResult:
    """Outcome of one voting run.

    ``samples_used`` counts completed samples only. Failed samples still use
    up the budget, so a run stopped as ``budget_exhausted`` has
    ``attempts == max_samples`` while ``samples_used`` may be smaller.
    """

    final_answer: Answer
    samples_used: int
    steps: StepLedger
    per_sample_answers: List[Answer]
    stop_reason: str
    m_history: List[np.ndarray] = field(default_factory=list)
    samples: List[np.ndarray] = field(default_factory=list)
    failed_samples: int = 0

    @property
    def attempts(self) -> int:
        return self.samples_used + self.failed_samples

    @property
    def total_steps(self) -> int:
        return self.steps.forwards

    @property
    def consistency_level(self) -> float:
        return voting_consistency_level(self.per_sample_answers)

    def sample_set(self) -> SampleSet:
        return SampleSet(np.stack(self.samples), tuple(self.per_sample_answers))


def _decode_sample(index, seq, schedule, cfg, denoiser, seed, ledger, extractor):
    """Decode one sample; returns (tokens, answer) or None when the denoiser failed."""
    ledger.begin_sample()
    rng = make_rng(seed, "sample", index)
    try:
        completed = decode_sequence(seq, schedule, cfg, denoiser, rng, ledger)
    except DenoiserError as exc:
        logger.warning("sample %d dropped after %d steps: %s", index, ledger.per_sample[-1], exc)
        return None
    return completed.gen.copy(), extractor(completed.gen)


def _finish(samples, answers, ledger, stop_reason, m_history, failed) -> RunResult:
    if not answers:
        raise RunError(f"no sample completed ({failed} failed)")
    return RunResult(
        final_answer=majority_vote(answers),
        samples_used=len(answers),
        steps=ledger,
        per_sample_answers=answers,
        stop_reason=stop_reason,
        m_history=m_history,
        samples=samples,
        failed_samples=failed,
    )


def dvoting_run(
    prompt: Sequence[int],
    cfg: GenerationConfig,
    cparams: ConsistencyParams,
    denoiser: Denoiser,
    schedule: BlockSchedule,
    extractor: AnswerExtractor,
    seed: Optional[int] = None,
) -> RunResult:
    """Sample, check consistency, remask and resample until a stop rule fires, then vote.

    Before every sample after the first: work out which positions to
    regenerate, then stop if the answers have converged or if no position
    needs regenerating; otherwise keep the agreeing tokens, mask the rest and
    decode again. Sample i draws from its own RNG derived
    from ``seed`` and i.
    """
    seed = cfg.seed if seed is None else seed
    vocab = denoiser.vocab
    ledger = StepLedger()
    samples: List[np.ndarray] = []
    answers: List[Answer] = []
    m_history: List[np.ndarray] = []
    failed = 0
    stop_reason = STOP_BUDGET_EXHAUSTED

    for index in range(cfg.max_samples):
        seq = MaskedSequence.fully_masked(vocab, prompt, cfg.gen_len)
        if samples:
            sample_set = SampleSet(np.stack(samples), tuple(answers))
            plan = compute_remask_mask(sample_set, cparams)
            m_history.append(plan.mask.copy())
            if check_answer_stop(answers, cparams.c_stop, cparams.require_majority):
                stop_reason = STOP_ANSWER_CONVERGED
                break
            if len(samples) >= 2 and check_token_stop(sample_set, cparams):
                stop_reason = STOP_TOKEN_CONVERGED
                break
            kept = ~plan.mask
            seq.gen[kept] = plan.tokens[kept]
            logger.debug("sample %d keeps %d of %d positions", index, plan.retained, cfg.gen_len)

        decoded = _decode_sample(index, seq, schedule, cfg, denoiser, seed, ledger, extractor)
        if decoded is None:
            failed += 1
            continue
        samples.append(decoded[0])
        answers.append(decoded[1])

    return _finish(samples, answers, ledger, stop_reason, m_history, failed)


def majority_voting_run(
    prompt: Sequence[int],
    cfg: GenerationConfig,
    denoiser: Denoiser,
    schedule: BlockSchedule,
    extractor: AnswerExtractor,
    seed: Optional[int] = None,
) -> RunResult:
    """``cfg.max_samples`` independent decodes from a fully masked sequence, then a vote."""
    seed = cfg.seed if seed is None else seed
    ledger = StepLedger()
    samples: List[np.ndarray] = []
    answers: List[Answer] = []
    failed = 0
    for index in range(cfg.max_samples):
        seq = MaskedSequence.fully_masked(denoiser.vocab, prompt, cfg.gen_len)
        decoded = _decode_sample(index, seq, schedule, cfg, denoiser, seed, ledger, extractor)
        if decoded is None:
            failed += 1
            continue
        samples.append(decoded[0])
        answers.append(decoded[1])
    return _finish(samples, answers, ledger, STOP_BUDGET_EXHAUSTED, [], failed)
