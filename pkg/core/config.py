import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

from core.exceptions import ConfigError

# Generation length -> block size pairing used for the published runs.
DEFAULT_BLOCK_SIZES = {128: 8, 256: 16, 512: 32}

STRATEGY_ENTROPY = "entropy"
STRATEGY_FULL_STEPS = "full_steps"
STRATEGY_HALF_STEPS = "half_steps"
STRATEGIES = (STRATEGY_ENTROPY, STRATEGY_FULL_STEPS, STRATEGY_HALF_STEPS)


def default_block_size(gen_len: int) -> int:
    if gen_len in DEFAULT_BLOCK_SIZES:
        return DEFAULT_BLOCK_SIZES[gen_len]
    return max(1, gen_len // 16)


@dataclass(frozen=True)
class GenerationConfig:
    """Decoding and sampling parameters shared by every method.

    ``alpha`` is an entropy threshold in nats (``math.inf`` commits every
    masked position of the block per call). ``temperature`` 0 means greedy.
    ``block_size`` None picks the default pairing for ``gen_len``.
    """

    gen_len: int = 128
    block_size: Optional[int] = None
    alpha: float = 0.3
    temperature: float = 0.6
    max_samples: int = 5
    stop_count: int = 2
    tau_frac: float = 0.5
    seed: int = 0
    strategy: str = STRATEGY_ENTROPY
    top_p: Optional[float] = None

    def __post_init__(self):
        if self.block_size is None:
            object.__setattr__(self, "block_size", default_block_size(self.gen_len))
        self.validate()

    def validate(self) -> None:
        if self.gen_len < 1:
            raise ConfigError(f"gen_len must be positive, got {self.gen_len}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be positive, got {self.block_size}")
        if math.isnan(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0 or inf, got {self.alpha}")
        if math.isnan(self.temperature) or self.temperature < 0 or math.isinf(self.temperature):
            raise ConfigError(f"temperature must be finite and >= 0, got {self.temperature}")
        if self.max_samples < 1:
            raise ConfigError(f"max_samples must be >= 1, got {self.max_samples}")
        if self.stop_count < 2:
            raise ConfigError(f"stop_count must be >= 2, got {self.stop_count}")
        if not 0 < self.tau_frac <= 1:
            raise ConfigError(f"tau_frac must lie in (0, 1], got {self.tau_frac}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {', '.join(STRATEGIES)}, got {self.strategy!r}")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ConfigError(f"top_p must lie in (0, 1], got {self.top_p}")
        if not -(2 ** 63) <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")

    def with_changes(self, **changes) -> "GenerationConfig":
        return replace(self, **changes)

    def snapshot(self) -> dict:
        """JSON-ready view of the config plus how the open thresholds were read."""
        data = asdict(self)
        data["alpha"] = "inf" if math.isinf(self.alpha) else self.alpha
        data["entropy_on"] = "temperature_adjusted"
        data["step_unit"] = "denoiser_forward_call"
        return data
