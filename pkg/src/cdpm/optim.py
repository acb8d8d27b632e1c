"""AdamW with linear warmup and exponential decay."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergedTrainingError, InvalidInputError


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 1e-5
    peak_lr: float = 1e-3
    warmup_steps: int = 2000
    total_steps: int = 100_000
    decay_floor: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(cfg: OptimizerConfig, step: int) -> float:
    """Learning rate used for the update numbered ``step`` (0-based).

    Linear from ``base_lr`` to ``peak_lr`` over the warmup, then geometric decay
    that reaches ``decay_floor`` at ``total_steps``; anything at or below the
    floor is returned as 0.
    """
    if step < cfg.warmup_steps:
        return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span <= 0 or step >= cfg.total_steps:
        return 0.0
    frac = (step - cfg.warmup_steps) / span
    lr = cfg.peak_lr * (cfg.decay_floor / cfg.peak_lr) ** frac
    return 0.0 if lr <= cfg.decay_floor else lr


@dataclass
class AdamW:
    config: OptimizerConfig
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0

    def step(self, params: dict, grads: dict) -> float:
        """Update ``params`` in place; returns the learning rate used.

        Weight decay is decoupled and skipped for biases (names ending ``.b``).
        """
        cfg = self.config
        if set(grads) != set(params):
            raise InvalidInputError("gradient names do not match parameters")
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise InvalidInputError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise DivergedTrainingError(self.step_count, f"non-finite gradient for {name}")
        lr = learning_rate(cfg, self.step_count)
        self.step_count += 1
        k = self.step_count
        c1 = 1.0 - cfg.beta1 ** k
        c2 = 1.0 - cfg.beta2 ** k
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            if lr == 0.0:
                continue
            if cfg.weight_decay and not name.endswith(".b"):
                p *= 1.0 - lr * cfg.weight_decay
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)
        return lr
