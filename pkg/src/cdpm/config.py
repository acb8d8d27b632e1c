"""Run configuration and the shipped profiles."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .conditioning import CHANNELS, COND_MODES, cond_width
from .data import DatasetConfig
from .denoiser import DenoiserConfig
from .diffusion import MODES
from .errors import InvalidInputError
from .optim import OptimizerConfig
from .schedule import SIGMA_MODES, NoiseSchedule, linear_schedule

CONFIG_VERSION = 1


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    sigma_mode: str = "beta"

    def build(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end, self.sigma_mode)


@dataclass(frozen=True)
class ArchConfig:
    hidden: int = 64
    blocks: tuple = ("point", "global", "point", "global")
    time_freqs: int = 8
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))


@dataclass(frozen=True)
class RunConfig:
    mode: str = "cdpm"
    cond: str = "L"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    architecture: ArchConfig = field(default_factory=ArchConfig)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(
        warmup_steps=400, total_steps=8000))
    data: DatasetConfig = field(default_factory=DatasetConfig)
    dataset: str = "data/desk"
    batch_size: int = 16
    total_steps: int = 8000
    seed: int = 0
    out: str = "runs/desk"
    mask_ratio: float = 0.0
    tau: float = 0.05
    oracle_k: int = 1
    checkpoint_every: int = 1000
    overfit: bool = False

    @property
    def N(self) -> int:
        return self.data.N

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if self.cond not in COND_MODES:
            raise InvalidInputError(f"cond must be one of {COND_MODES}")
        if self.schedule.sigma_mode not in SIGMA_MODES:
            raise InvalidInputError(f"sigma_mode must be one of {SIGMA_MODES}")
        self.schedule.build()
        self.data.validate()
        if self.batch_size < 1 or self.total_steps < 0 or self.checkpoint_every < 1:
            raise InvalidInputError("batch_size and checkpoint_every must be >= 1, total_steps >= 0")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise InvalidInputError("mask_ratio must be in [0, 1]")
        if not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        if self.oracle_k < 1:
            raise InvalidInputError("oracle_k must be >= 1")
        o = self.optimizer
        if not (0 < o.base_lr <= o.peak_lr and o.warmup_steps >= 0 and 0 <= o.weight_decay):
            raise InvalidInputError("invalid optimizer settings")
        self.denoiser_config()
        return self

    def optimizer_config(self) -> OptimizerConfig:
        return replace(self.optimizer, total_steps=self.total_steps)

    def denoiser_config(self) -> DenoiserConfig:
        a = self.architecture
        return DenoiserConfig(cond_width=cond_width(self.cond, len(CHANNELS)), hidden=a.hidden,
                              blocks=a.blocks, time_freqs=a.time_freqs, T=self.schedule.T,
                              dtype=a.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"]["blocks"] = list(self.architecture.blocks)
        d["data"] = self.data.to_dict()
        d["optimizer"] = self.optimizer_config().to_dict()
        d["config_version"] = CONFIG_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        version = d.pop("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise InvalidInputError(f"unsupported config version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config fields: {sorted(unknown)}")
        base = cls()
        kw = {}
        for k, v in d.items():
            if k in ("schedule", "architecture", "optimizer", "data"):
                try:
                    v = replace(getattr(base, k), **v)
                except TypeError as exc:
                    raise InvalidInputError(f"bad '{k}' section: {exc}") from None
            kw[k] = v
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **kw)


# Desk-scale profile: 350 primitives, 256 points, 100 steps, 8000 updates.
DESK = RunConfig()

# Full-scale settings (8192 points, 1000 steps, width 128); far beyond a CPU budget.
FULL = RunConfig(
    schedule=ScheduleConfig(T=1000, beta_start=1e-4, beta_end=0.02),
    architecture=ArchConfig(hidden=128),
    optimizer=OptimizerConfig(base_lr=1e-5, peak_lr=1e-3, warmup_steps=2000, total_steps=100_000),
    data=DatasetConfig(N=8192),
    total_steps=100_000,
    tau=0.01,
    oracle_k=5,
    checkpoint_every=10_000,
)
