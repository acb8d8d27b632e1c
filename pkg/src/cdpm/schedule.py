"""Variance schedule tables for the forward and reverse chains.

Indexing follows the transition convention ``t = 1..T``. Arrays are stored
with a leading pad so that ``beta[t]`` reads naturally; ``beta[0]`` is 0 and
``alpha_bar[0]`` is 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SIGMA_MODES = ("beta", "beta_tilde")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    beta_start: float
    beta_end: float
    sigma_mode: str = "beta"

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise InvalidInputError(f"step {t} outside 1..{self.T}")

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start,
                "beta_end": self.beta_end, "sigma_mode": self.sigma_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return linear_schedule(int(d["T"]), float(d["beta_start"]),
                               float(d["beta_end"]), d.get("sigma_mode", "beta"))


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                    sigma_mode: str = "beta") -> NoiseSchedule:
    """Linearly spaced betas over ``t = 1..T`` inclusive.

    ``sigma_mode="beta"`` uses sigma_t^2 = beta_t; ``"beta_tilde"`` uses the
    posterior variance beta_t (1 - abar_{t-1}) / (1 - abar_t).
    """
    if int(T) != T or T < 1:
        raise InvalidInputError("T must be a positive integer")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidInputError("need 0 < beta_start <= beta_end < 1")
    if sigma_mode not in SIGMA_MODES:
        raise InvalidInputError(f"sigma_mode must be one of {SIGMA_MODES}")
    T = int(T)
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = beta_start + (np.arange(T, dtype=np.float64) / (T - 1)) * (beta_end - beta_start)
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1)
    alpha_bar[0] = 1.0
    for t in range(1, T + 1):
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t]
    if sigma_mode == "beta":
        sigma = np.sqrt(beta)
    else:
        var = np.zeros(T + 1)
        var[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
        sigma = np.sqrt(var)
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(T, beta, alpha, alpha_bar, sigma,
                         float(beta_start), float(beta_end), sigma_mode)
