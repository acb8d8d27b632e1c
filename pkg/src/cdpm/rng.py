"""Seeded random streams.

Every stream is a Philox-4x64 counter generator keyed from
``SeedSequence([seed, *path])``, so a stream is identified by a seed plus an
integer path (item index, chain index, ...) and never by call order.

Gaussians come from Box-Muller on the stream's 53-bit uniform doubles rather
than numpy's ziggurat, which keeps the transform fixed and documented:

    z0 = sqrt(-2 ln(1 - u0)) * cos(2 pi u1)
    z1 = sqrt(-2 ln(1 - u0)) * sin(2 pi u1)
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, path)])
    return np.random.Generator(np.random.Philox(ss))


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    n = int(np.prod(shape, dtype=np.int64))
    m = (n + 1) // 2
    u = rng.random((2, m))
    r = np.sqrt(-2.0 * np.log1p(-u[0]))
    theta = 2.0 * np.pi * u[1]
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n].reshape(shape)
