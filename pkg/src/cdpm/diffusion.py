"""Forward corruption, reverse sampling and the training objective.

Two modes share every code path:

``ddpm``  plain denoising diffusion.
``cdpm``  centered variant: the clean cloud, the injected noise, the predicted
          noise and every reverse iterate are projected onto the zero-centroid
          subspace.

All functions accept batched clouds ``(..., N, 3)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .conditioning import ConditioningContext, gather
from .denoiser import mse_loss
from .errors import DivergedTrainingError, InvalidInputError, InvalidStateError
from .geometry import Camera, centralize, centroid, project
from .rng import make_rng, standard_normal
from .schedule import NoiseSchedule

MODES = ("ddpm", "cdpm")
CHAIN_STREAM = 0x5245564552534531  # keeps chain streams apart from training streams

center_projection = centralize


def check_mode(mode: str) -> str:
    mode = mode.lower()
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def sample_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. standard-normal 3-vectors from ``rng``."""
    if n < 1:
        raise InvalidInputError("need at least one point")
    return standard_normal(rng, (n, 3))


def _coef(table, t, ndim):
    c = np.asarray(table)[np.asarray(t)]
    return c.reshape(c.shape + (1,) * (ndim - c.ndim)) if c.ndim else c


def forward_sample(sched: NoiseSchedule, x0, t, noise) -> np.ndarray:
    """Closed-form corruption ``sqrt(abar_t) x0 + sqrt(1 - abar_t) noise``.

    ``t`` may be a scalar or one step per leading batch index; ``t = 0``
    returns ``x0`` unchanged.
    """
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise InvalidInputError(f"x0 {x0.shape} and noise {noise.shape} differ in shape")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > sched.T):
        raise InvalidInputError(f"step outside 0..{sched.T}")
    # one step per batch element: broadcast over (N, 3)
    nd = t.ndim + 2
    a = _coef(np.sqrt(sched.alpha_bar), t, nd)
    s = _coef(np.sqrt(1.0 - sched.alpha_bar), t, nd)
    return a * x0 + s * noise


def forward_step(sched: NoiseSchedule, x_prev, t: int, noise) -> np.ndarray:
    """One Markov corruption step ``sqrt(1 - beta_t) x + sqrt(beta_t) noise``."""
    x_prev = np.asarray(x_prev)
    noise = np.asarray(noise)
    if x_prev.shape != noise.shape:
        raise InvalidInputError("shape mismatch between cloud and noise")
    sched.check_step(t)
    return np.sqrt(sched.alpha[t]) * x_prev + np.sqrt(sched.beta[t]) * noise


def posterior_mean(sched: NoiseSchedule, x_t, t: int, eps_pred) -> np.ndarray:
    return (x_t - (sched.beta[t] / np.sqrt(1.0 - sched.alpha_bar[t])) * eps_pred) / np.sqrt(sched.alpha[t])


def reverse_update(sched: NoiseSchedule, x_t, t: int, eps_pred, noise, center: bool):
    """``x^{t-1}`` from ``x^t``; no noise is added on the final step ``t = 1``."""
    if t < 1:
        raise InvalidStateError("cannot step below t = 0")
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if center:
        eps_pred = centralize(eps_pred)
    x = posterior_mean(sched, np.asarray(x_t, dtype=np.float64), t, eps_pred)
    if t > 1:
        x = x + sched.sigma[t] * np.asarray(noise)
    if center:
        x = centralize(x)
    return x


@dataclass(frozen=True)
class DiffusionState:
    t: int
    cloud: np.ndarray
    mode: str = "cdpm"


def reverse_step(sched: NoiseSchedule, state: DiffusionState, eps_pred, noise) -> DiffusionState:
    if state.t < 1:
        raise InvalidStateError("reverse_step called at t = 0")
    mode = check_mode(state.mode)
    x = reverse_update(sched, state.cloud, state.t, eps_pred, noise, center=mode == "cdpm")
    return DiffusionState(state.t - 1, x, state.mode)


# --- sampling chains -----------------------------------------------------------

@dataclass
class ChainTrace:
    """Per-step centroid record, ordered from ``t = T`` down to ``t = 0``.

    ``pixel`` is the projection of the centroid through the chain's camera
    (NaN when no camera is attached).
    """

    t: np.ndarray          # (T+1,)
    centroid: np.ndarray   # (T+1, 3)
    pixel: np.ndarray      # (T+1, 2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "cx", "cy", "cz", "px", "py"])
        for k in range(len(self.t)):
            c, p = self.centroid[k], self.pixel[k]
            w.writerow([int(self.t[k])] + [repr(float(v)) for v in (*c, *p)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ChainTrace":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64).reshape(-1, 6)
        return cls(arr[:, 0].astype(int), arr[:, 1:4], arr[:, 4:6])


Denoise = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def zero_denoiser(x, cond, t):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def _gather_batch(contexts, x, width):
    if contexts is None:
        return np.zeros(x.shape[:-1] + (width,))
    return np.stack([gather(ctx, xb) for ctx, xb in zip(contexts, x)])


def sample_chains(sched: NoiseSchedule, denoiser: Denoise,
                  contexts: Sequence[ConditioningContext] | None, n: int, mode: str,
                  seeds: Sequence[int], *, project_centers: bool | None = None,
                  cond_width: int | None = None):
    """Run one reverse chain per seed, batched through the denoiser.

    ``contexts`` supplies one conditioning context per chain (or ``None`` for
    an unconditioned run with ``cond_width`` zero features). Chain ``b`` draws
    all of its noise from ``make_rng(seeds[b], CHAIN_STREAM)``, so each result
    depends only on its own seed. ``project_centers`` overrides the centering
    that ``mode`` implies.

    Returns ``(x0, traces)`` with ``x0`` of shape ``(B, n, 3)``.
    """
    mode = check_mode(mode)
    center = (mode == "cdpm") if project_centers is None else bool(project_centers)
    B = len(seeds)
    if contexts is not None and len(contexts) != B:
        raise InvalidInputError("need one conditioning context per chain")
    if contexts is None and cond_width is None:
        cond_width = getattr(getattr(denoiser, "config", None), "cond_width", 0)
    rngs = [make_rng(s, CHAIN_STREAM) for s in seeds]
    x = np.stack([sample_noise(n, r) for r in rngs])
    if center:
        x = centralize(x)
    T = sched.T
    cents = np.empty((B, T + 1, 3))
    cents[:, 0] = centroid(x)
    for k, t in enumerate(range(T, 0, -1), start=1):
        cond = _gather_batch(contexts, x, cond_width)
        eps = np.asarray(denoiser(x, cond, np.full(B, t)), dtype=np.float64)
        if t > 1:
            z = np.stack([sample_noise(n, r) for r in rngs])
        else:
            z = None
        x = reverse_update(sched, x, t, eps, z, center)
        cents[:, k] = centroid(x)
    traces = []
    for b in range(B):
        if contexts is not None:
            pix, _, _ = project(contexts[b].camera, cents[b])
        else:
            pix = np.full((T + 1, 2), np.nan)
        traces.append(ChainTrace(np.arange(T, -1, -1), cents[b], pix))
    return x, traces


def sample_chain(sched: NoiseSchedule, denoiser: Denoise, cond: ConditioningContext | None,
                 n: int, mode: str, seed: int, **kwargs):
    """Single-chain convenience wrapper around :func:`sample_chains`."""
    x, traces = sample_chains(sched, denoiser, None if cond is None else [cond], n, mode,
                              [seed], **kwargs)
    return x[0], traces[0]


def anchor_pixel(cam: Camera) -> np.ndarray:
    """Pixel where the origin (the centroid of any centered cloud) projects."""
    return project(cam, np.zeros((1, 3)))[0][0]


# --- training ----------------------------------------------------------------

@dataclass
class StepResult:
    loss: float
    grads: dict
    t: np.ndarray
    centering_violations: int


def training_step(sched: NoiseSchedule, denoiser, x0, contexts, mode: str,
                  rng: np.random.Generator, *, t=None, noise=None, step: int = 0,
                  center_tol: float = 1e-6) -> StepResult:
    """Loss and parameter gradients for one batch.

    ``x0`` is ``(B, N, 3)``; one step ``t`` is drawn uniformly from 1..T per
    batch element unless given. In ``cdpm`` mode the clean cloud, the noise and
    the prediction are centered before the squared error is taken.
    """
    mode = check_mode(mode)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 2:
        x0 = x0[None]
    B, N, _ = x0.shape
    centered = mode == "cdpm"
    if t is None:
        t = rng.integers(1, sched.T + 1, size=B)
    t = np.broadcast_to(np.asarray(t), (B,))
    if noise is None:
        noise = standard_normal(rng, (B, N, 3))
    eps = np.asarray(noise, dtype=np.float64).reshape(B, N, 3)
    if centered:
        x0 = centralize(x0)
        eps = centralize(eps)
    x_t = forward_sample(sched, x0, t, eps)
    violations = 0
    if centered:
        violations = int(np.sum(np.max(np.abs(centroid(x_t)), axis=-1) > center_tol))
    cond = _gather_batch(contexts, x_t, getattr(denoiser.config, "cond_width", 0))
    pred = denoiser.forward(x_t, cond, t).astype(np.float64)
    if centered:
        pred = centralize(pred)
    loss, dpred = mse_loss(pred, eps)
    if not np.isfinite(loss):
        raise DivergedTrainingError(step, "non-finite loss")
    if centered:
        # centering is an orthogonal projection, so it is its own adjoint
        dpred = centralize(dpred)
    grads, _, _ = denoiser.backward(dpred)
    return StepResult(loss, grads, np.array(t), violations)
