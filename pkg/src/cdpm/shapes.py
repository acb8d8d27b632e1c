"""Analytic primitives: ray casting and area-uniform surface sampling.

Each primitive is a canonical solid (unit sphere, cube [-1, 1]^3, or cylinder
of radius 1 with z in [-1, 1]) mapped to world space by ``p = R (s * u) + c``.
Anisotropic scales give ellipsoids, cuboids and elliptic cylinders.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .rng import make_rng, standard_normal

KINDS = ("sphere", "box", "cylinder")


@dataclass(frozen=True)
class PrimitiveShape:
    kind: str
    scale: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown primitive kind {self.kind!r}")
        s = np.asarray(self.scale, dtype=np.float64).reshape(3)
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0):
            raise InvalidInputError(f"degenerate primitive scale {self.scale.tolist()}")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise InvalidInputError("primitive rotation is not orthonormal")

    def to_local(self, p):
        return ((np.asarray(p) - self.center) @ self.rotation) / self.scale

    def to_world(self, u):
        return (np.asarray(u) * self.scale) @ self.rotation.T + self.center

    def half_extent(self) -> np.ndarray:
        """Half-size of a world-axis-aligned box that contains the shape."""
        return np.abs(self.rotation) @ self.scale

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale.tolist(),
                "rotation": self.rotation.reshape(-1).tolist(),
                "center": self.center.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PrimitiveShape":
        return cls(d["kind"], d["scale"], np.reshape(d["rotation"], (3, 3)),
                   d.get("center", [0.0, 0.0, 0.0]))


# --- ray casting -------------------------------------------------------------

def _hit_sphere(o, d):
    a = np.einsum("ij,ij->i", d, d)
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - 1.0
    disc = b * b - a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-b - sq) / a
    t1 = (-b + sq) / a
    t = np.where(t0 > 1e-9, t0, t1)
    hit &= t > 1e-9
    n = o + t[:, None] * d
    return np.where(hit, t, np.inf), n


def _hit_box(o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (-1.0 - o) * inv
        tb = (1.0 - o) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_enter = tmin.max(axis=1)
    t_exit = tmax.min(axis=1)
    axis = tmin.argmax(axis=1)
    hit = (t_enter <= t_exit) & (t_enter > 1e-9)
    n = np.zeros_like(o)
    rows = np.arange(len(o))
    n[rows, axis] = -np.sign(d[rows, axis])
    return np.where(hit, t_enter, np.inf), n


def _hit_cylinder(o, d):
    # lateral surface x^2 + y^2 = 1, |z| <= 1
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - 1.0
    disc = b * b - a * c
    ok = (disc >= 0) & (a > 1e-15)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = np.where(ok, (-b - sq) / np.where(a > 1e-15, a, 1.0), np.inf)
    z_side = o[:, 2] + t_side * d[:, 2]
    side_ok = ok & (t_side > 1e-9) & (np.abs(z_side) <= 1.0)
    t_side = np.where(side_ok, t_side, np.inf)
    # caps z = +-1
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = np.full(len(o), np.inf)
        cap_sign = np.zeros(len(o))
        for zc in (-1.0, 1.0):
            tc = (zc - o[:, 2]) / d[:, 2]
            p = o + tc[:, None] * d
            good = np.isfinite(tc) & (tc > 1e-9) & (p[:, 0] ** 2 + p[:, 1] ** 2 <= 1.0)
            better = good & (tc < t_cap)
            t_cap = np.where(better, tc, t_cap)
            cap_sign = np.where(better, zc, cap_sign)
    use_side = t_side <= t_cap
    t = np.where(use_side, t_side, t_cap)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    n = np.zeros_like(o)
    n[:, 0] = np.where(use_side, p[:, 0], 0.0)
    n[:, 1] = np.where(use_side, p[:, 1], 0.0)
    n[:, 2] = np.where(use_side, 0.0, cap_sign)
    return t, n


_HITTERS = {"sphere": _hit_sphere, "box": _hit_box, "cylinder": _hit_cylinder}


def intersect(shape: PrimitiveShape, origins, directions):
    """Cast rays against ``shape``.

    Returns ``(t, normals)``: the ray parameter of the first hit (``inf`` on
    miss) in units of the given world-space ``directions``, and unit outward
    world-space normals (undefined on miss).
    """
    shape.validate()
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    o_l = shape.to_local(o)
    d_l = (d @ shape.rotation) / shape.scale
    t, n_l = _HITTERS[shape.kind](np.broadcast_to(o_l, d_l.shape).copy(), d_l)
    # normals transform with the inverse-transpose of the local-to-world map
    n_w = (n_l / shape.scale) @ shape.rotation.T
    norm = np.linalg.norm(n_w, axis=1, keepdims=True)
    n_w = n_w / np.where(norm > 0, norm, 1.0)
    return t, n_w


# --- surface sampling ---------------------------------------------------------

def _ellipse_perimeter(a, b, m=4096):
    th = (np.arange(m) + 0.5) * (2 * np.pi / m)
    return float(np.mean(np.sqrt((a * np.sin(th)) ** 2 + (b * np.cos(th)) ** 2)) * 2 * np.pi)


def surface_area(shape: PrimitiveShape) -> float:
    shape.validate()
    a, b, c = shape.scale
    if shape.kind == "box":
        return 8.0 * (a * b + b * c + a * c)
    if shape.kind == "cylinder":
        return 2.0 * np.pi * a * b + _ellipse_perimeter(a, b) * 2.0 * c
    # Knud Thomsen's approximation; only used for reporting
    p = 1.6075
    return 4 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)


def _sample_ellipsoid(s, n, rng):
    out = np.empty((0, 3))
    inv = 1.0 / s
    # area element of u -> s*u on the unit sphere is |det S| * ||S^-1 u||
    gmax = np.max(inv)
    while len(out) < n:
        m = max(2 * (n - len(out)), 64)
        u = standard_normal(rng, (m, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        g = np.linalg.norm(u * inv, axis=1)
        keep = rng.random(m) * gmax <= g
        out = np.concatenate([out, u[keep]])
    return out[:n] * s


def _sample_box(s, n, rng, return_faces=False):
    a, b, c = s
    face_area = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    faces = rng.choice(6, size=n, p=face_area / face_area.sum())
    uv = rng.random((n, 2)) * 2.0 - 1.0
    u = np.empty((n, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -1.0, 1.0)
    for k in range(3):
        others = [j for j in range(3) if j != k]
        sel = axis == k
        u[sel, k] = sign[sel]
        u[sel, others[0]] = uv[sel, 0]
        u[sel, others[1]] = uv[sel, 1]
    pts = u * s
    return (pts, faces) if return_faces else pts


def _sample_cylinder(s, n, rng):
    a, b, c = s
    cap_area = np.pi * a * b
    side_area = _ellipse_perimeter(a, b) * 2.0 * c
    part = rng.choice(3, size=n, p=np.array([cap_area, cap_area, side_area]) / (2 * cap_area + side_area))
    u = np.empty((n, 3))
    caps = part < 2
    k = int(caps.sum())
    r = np.sqrt(rng.random(k))
    th = 2 * np.pi * rng.random(k)
    u[caps, 0] = r * np.cos(th)
    u[caps, 1] = r * np.sin(th)
    u[caps, 2] = np.where(part[caps] == 0, -1.0, 1.0)
    side_idx = np.flatnonzero(~caps)
    speed_max = max(a, b)
    thetas = np.empty(0)
    while len(thetas) < len(side_idx):
        m = max(2 * (len(side_idx) - len(thetas)), 64)
        th = 2 * np.pi * rng.random(m)
        speed = np.sqrt((a * np.sin(th)) ** 2 + (b * np.cos(th)) ** 2)
        thetas = np.concatenate([thetas, th[rng.random(m) * speed_max <= speed]])
    thetas = thetas[: len(side_idx)]
    u[side_idx, 0] = np.cos(thetas)
    u[side_idx, 1] = np.sin(thetas)
    u[side_idx, 2] = rng.random(len(side_idx)) * 2.0 - 1.0
    return u * s


def sample_surface(shape: PrimitiveShape, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` points uniformly by area on the surface of ``shape``."""
    shape.validate()
    if n < 1:
        raise InvalidInputError("need at least one sample")
    rng = make_rng(seed)
    if shape.kind == "sphere":
        local = _sample_ellipsoid(shape.scale, n, rng)
    elif shape.kind == "box":
        local = _sample_box(shape.scale, n, rng)
    else:
        local = _sample_cylinder(shape.scale, n, rng)
    return local @ shape.rotation.T + shape.center
