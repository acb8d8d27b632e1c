"""Chamfer distance, F-Score, best-of-k selection and centroid drift."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import Camera, project

CHAMFER_CONVENTION = "squared-l2, mean per cloud, summed over both directions"


def _check(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise InvalidInputError(f"{name}: expected (N, 3) points, got {a.shape}")
    if len(a) == 0:
        raise InvalidInputError(f"{name}: empty point cloud")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name}: non-finite coordinates")
    return a


def nearest_sq_brute(queries, points) -> np.ndarray:
    """O(NM) squared nearest distances; the reference for the grid search."""
    q = _check(queries, "queries")
    p = _check(points, "points")
    out = np.empty(len(q))
    for s in range(0, len(q), 256):
        d = ((q[s:s + 256, None, :] - p[None, :, :]) ** 2).sum(axis=-1)
        out[s:s + 256] = d.min(axis=1)
    return out


class GridIndex:
    """Sparse uniform-grid hash over a fixed point set.

    Cells are keyed by integer coordinates ``floor((p - origin) / cell)``.
    A query examines occupied cells in order of Chebyshev cell distance and
    stops once its best distance is no larger than ``ring * cell``: every
    unexamined point is at least that far away.
    """

    def __init__(self, points, cell: float | None = None):
        self.points = _check(points, "points")
        n = len(self.points)
        lo = self.points.min(axis=0)
        extent = float(np.max(self.points.max(axis=0) - lo))
        if cell is None:
            cell = extent / np.cbrt(n) if extent > 0 else 1.0
        self.cell = float(cell) if cell > 0 else 1.0
        self.origin = lo
        coords = np.floor((self.points - lo) / self.cell).astype(np.int64)
        cells, inverse = np.unique(coords, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=len(cells))
        self.starts = np.concatenate([[0], np.cumsum(counts)])
        self.cells = cells

    def _cell_of(self, q):
        return np.floor((q - self.origin) / self.cell).astype(np.int64)

    def nearest_sq(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Squared distance and index of the nearest indexed point per query."""
        q = _check(queries, "queries")
        best = np.full(len(q), np.inf)
        arg = np.full(len(q), -1, dtype=np.int64)
        qcells = self._cell_of(q)
        groups, ginv = np.unique(qcells, axis=0, return_inverse=True)
        ginv = ginv.reshape(-1)
        for g, gc in enumerate(groups):
            members = np.flatnonzero(ginv == g)
            qs = q[members]
            ring = np.max(np.abs(self.cells - gc), axis=1)
            ring_order = np.argsort(ring, kind="stable")
            rings_sorted = ring[ring_order]
            gbest = np.full(len(members), np.inf)
            garg = np.full(len(members), -1, dtype=np.int64)
            pos = 0
            while pos < len(ring_order):
                r = rings_sorted[pos]
                end = np.searchsorted(rings_sorted, r, side="right")
                idx = np.concatenate([self.order[self.starts[c]:self.starts[c + 1]]
                                      for c in ring_order[pos:end]])
                d = ((qs[:, None, :] - self.points[idx][None, :, :]) ** 2).sum(axis=-1)
                j = d.argmin(axis=1)
                dmin = d[np.arange(len(qs)), j]
                better = dmin < gbest
                gbest[better] = dmin[better]
                garg[better] = idx[j[better]]
                pos = end
                # points in rings beyond r are at least r * cell away
                if np.all(gbest <= (r * self.cell) ** 2):
                    break
            best[members] = gbest
            arg[members] = garg
        return best, arg


def nearest_sq(queries, points, cell: float | None = None) -> np.ndarray:
    return GridIndex(points, cell).nearest_sq(queries)[0]


def chamfer(a, b) -> float:
    """Symmetric squared Chamfer distance: mean NN d^2 from a to b plus b to a."""
    a = _check(a, "a")
    b = _check(b, "b")
    return float(nearest_sq(a, b).mean() + nearest_sq(b, a).mean())


def chamfer_brute(a, b) -> float:
    return float(nearest_sq_brute(a, b).mean() + nearest_sq_brute(b, a).mean())


@dataclass
class MetricReport:
    chamfer: float
    fscore: float
    precision: float
    recall: float
    threshold: float
    convention: str = CHAMFER_CONVENTION

    def to_dict(self) -> dict:
        return asdict(self)


def _prf(d_pred, d_gt, tau):
    precision = float(np.mean(np.sqrt(d_pred) < tau))
    recall = float(np.mean(np.sqrt(d_gt) < tau))
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def evaluate(pred, gt, tau: float = 0.01, *, brute: bool = False) -> MetricReport:
    """Chamfer and F-Score@tau of ``pred`` against ``gt``."""
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    pred = _check(pred, "pred")
    gt = _check(gt, "gt")
    nn = nearest_sq_brute if brute else nearest_sq
    d_pred = nn(pred, gt)
    d_gt = nn(gt, pred)
    p, r, f = _prf(d_pred, d_gt, tau)
    return MetricReport(float(d_pred.mean() + d_gt.mean()), f, p, r, float(tau))


def fscore(pred, gt, tau: float = 0.01) -> MetricReport:
    """Precision, recall and their harmonic mean at distance threshold ``tau``.

    A point counts as matched when its nearest neighbour in the other cloud is
    strictly closer than ``tau``. The report also carries the Chamfer distance.
    """
    return evaluate(pred, gt, tau)


def oracle_best(preds: Sequence, gt, tau: float = 0.01) -> tuple[int, MetricReport]:
    """Index and report of the prediction with the highest F-Score (first on ties)."""
    if len(preds) == 0:
        raise InvalidInputError("need at least one prediction")
    reports = [evaluate(p, gt, tau) for p in preds]
    best = int(np.argmax([r.fscore for r in reports]))
    return best, reports[best]


@dataclass
class DriftReport:
    centroid_norms: np.ndarray      # (T+1,)
    terminal_norm: float
    pixel_displacements: np.ndarray  # (T,)
    anchor_spread: float = field(default=0.0)

    def to_dict(self) -> dict:
        return {"centroid_norms": self.centroid_norms.tolist(),
                "terminal_norm": self.terminal_norm,
                "pixel_displacements": self.pixel_displacements.tolist(),
                "anchor_spread": self.anchor_spread}


def drift_stats(trace, cam: Camera | None = None) -> DriftReport:
    """Centroid norms per step and pixel motion of the projected centroid.

    Uses ``trace.pixel`` unless a camera is given, in which case the trace
    centroids are re-projected through it.
    """
    cents = np.asarray(trace.centroid, dtype=np.float64)
    if len(cents) == 0:
        raise InvalidInputError("empty trace")
    pix = project(cam, cents)[0] if cam is not None else np.asarray(trace.pixel)
    norms = np.linalg.norm(cents, axis=1)
    disp = np.linalg.norm(np.diff(pix, axis=0), axis=1)
    spread = float(np.max(np.abs(pix - pix[0]))) if len(pix) else 0.0
    return DriftReport(norms, float(norms[-1]), disp, spread)
