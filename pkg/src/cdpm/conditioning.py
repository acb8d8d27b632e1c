"""Feature maps and per-point condition vectors.

The feature map replaces a learned image backbone with five analytic
channels rendered from the primitive: silhouette, normalized depth and the
camera-frame surface normal. Points pick up features by projecting through
the camera and sampling the map bilinearly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .geometry import Camera, project
from .rng import make_rng
from .shapes import PrimitiveShape, intersect

CHANNELS = ("silhouette", "depth", "normal_x", "normal_y", "normal_z")
COND_MODES = ("L", "G", "G+L")

# depth is mapped to [0, 1] over a window of this half-width around the
# camera-to-origin distance; shapes live in [-0.5, 0.5]^3 so 1.0 is ample
DEPTH_HALF_RANGE = 1.0


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # (H, W, C) float32
    channel_names: tuple = CHANNELS

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def silhouette(self) -> np.ndarray:
        return self.data[..., 0] > 0.5

    @property
    def padded(self) -> np.ndarray:
        """Float64 copy with a one-pixel zero border, built once."""
        cached = self.__dict__.get("_padded")
        if cached is None:
            H, W, C = self.data.shape
            cached = np.zeros((H + 2, W + 2, C), dtype=np.float64)
            cached[1:-1, 1:-1] = self.data
            object.__setattr__(self, "_padded", cached)
        return cached


def empty_feature_map(cam: Camera, channels: int = len(CHANNELS)) -> FeatureMap:
    return FeatureMap(np.zeros((cam.height, cam.width, channels), dtype=np.float32))


def pixel_rays(cam: Camera):
    """World-space rays through every pixel center, row-major ``(H*W, 3)``."""
    v, u = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
    # pixel (i, j) covers [j, j+1) x [i, i+1); its center is at j + 0.5
    x = (u + 0.5 - cam.cx) / cam.fx
    y = (v + 0.5 - cam.cy) / cam.fy
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1).reshape(-1, 3)
    d_world = d_cam @ cam.rotation  # R^T d
    return cam.center, d_world


def render_feature_map(shape: PrimitiveShape | None, cam: Camera) -> FeatureMap:
    """Ray-cast ``shape`` into a silhouette/depth/normal map.

    ``shape=None`` renders an empty scene.
    """
    fmap = empty_feature_map(cam)
    if shape is None:
        return fmap
    shape.validate()
    origin, dirs = pixel_rays(cam)
    t, n_world = intersect(shape, origin[None, :], dirs)
    hit = np.isfinite(t)
    # direction z-component in the camera frame is 1, so t is camera depth
    depth = t[hit]
    dist = float(np.linalg.norm(cam.center))
    depth_n = np.clip((depth - (dist - DEPTH_HALF_RANGE)) / (2 * DEPTH_HALF_RANGE), 0.0, 1.0)
    n_cam = n_world[hit] @ cam.rotation.T
    flat = fmap.data.reshape(-1, fmap.channels)
    flat[hit, 0] = 1.0
    flat[hit, 1] = depth_n
    flat[hit, 2:5] = np.clip(n_cam, -1.0, 1.0)
    return fmap


def bilinear(fmap: FeatureMap, pixels, valid=None) -> np.ndarray:
    """Sample ``fmap`` at continuous pixel coordinates.

    Feature ``data[i, j]`` lives at the pixel center ``(j + 0.5, i + 0.5)``.
    Samples outside the lattice-center hull ``[0.5, W-0.5] x [0.5, H-0.5]``
    blend toward zero (out-of-frame is treated as background), and samples
    outside ``[0, W) x [0, H)`` or flagged invalid are exactly zero.
    """
    pix = np.asarray(pixels, dtype=np.float64)
    lead = pix.shape[:-1]
    pix = pix.reshape(-1, 2)
    H, W, C = fmap.data.shape
    u = pix[:, 0] - 0.5
    v = pix[:, 1] - 0.5
    inside = np.isfinite(u) & np.isfinite(v)
    inside &= (pix[:, 0] >= 0) & (pix[:, 0] < W) & (pix[:, 1] >= 0) & (pix[:, 1] < H)
    if valid is not None:
        inside &= np.asarray(valid).reshape(-1)
    u = np.where(inside, u, 0.0)
    v = np.where(inside, v, 0.0)
    j0 = np.floor(u).astype(np.int64)
    i0 = np.floor(v).astype(np.int64)
    fu = u - j0
    fv = v - i0
    padded = fmap.padded
    # padded index = lattice index + 1; j0 >= -1 and j0 + 1 <= W
    a = padded[i0 + 1, j0 + 1]
    b = padded[i0 + 1, j0 + 2]
    c = padded[i0 + 2, j0 + 1]
    d = padded[i0 + 2, j0 + 2]
    fu = fu[:, None]
    fv = fv[:, None]
    out = (a * (1 - fu) + b * fu) * (1 - fv) + (c * (1 - fu) + d * fu) * fv
    out[~inside] = 0.0
    return out.reshape(*lead, C)


@dataclass(frozen=True)
class ConditioningContext:
    fmap: FeatureMap
    camera: Camera
    mode: str = "L"
    mask_ratio: float = 0.0
    mask_seed: int | None = None
    _masked: FeatureMap | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in COND_MODES:
            raise InvalidInputError(f"conditioning mode must be one of {COND_MODES}")
        if self.mask_ratio and self._masked is None:
            seed = 0 if self.mask_seed is None else self.mask_seed
            object.__setattr__(self, "_masked", apply_mask(self.fmap, self.mask_ratio, seed))

    @property
    def effective_map(self) -> FeatureMap:
        return self._masked if self._masked is not None else self.fmap

    @property
    def width(self) -> int:
        return cond_width(self.mode, self.fmap.channels)

    def with_mask(self, ratio: float, seed: int) -> "ConditioningContext":
        return replace(self, mask_ratio=ratio, mask_seed=seed, _masked=None)


def cond_width(mode: str, channels: int = len(CHANNELS)) -> int:
    return 2 * channels if mode == "G+L" else channels


def gather_local(ctx: ConditioningContext, points) -> np.ndarray:
    """Per-point features at the projection of each point; zero when out of frame."""
    pix, _, valid = project(ctx.camera, points)
    return bilinear(ctx.effective_map, pix, valid)


def gather_global(ctx: ConditioningContext, points) -> np.ndarray:
    """Average-pooled local features, one vector per cloud."""
    return gather_local(ctx, points).mean(axis=-2)


def gather(ctx: ConditioningContext, points) -> np.ndarray:
    """Condition rows ``(..., N, width)`` for the context's mode."""
    local = gather_local(ctx, points)
    if ctx.mode == "L":
        return local
    pooled = np.broadcast_to(local.mean(axis=-2, keepdims=True), local.shape)
    if ctx.mode == "G":
        return np.array(pooled)
    return np.concatenate([pooled, local], axis=-1)


def apply_mask(fmap: FeatureMap, ratio: float, seed: int) -> FeatureMap:
    """Zero a random subset of object pixels across all channels.

    Exactly ``round(ratio * n_object_pixels)`` pixels are removed: the object
    pixel list is shuffled with the seeded stream and the prefix is zeroed.
    """
    if not 0.0 <= ratio <= 1.0:
        raise InvalidInputError("mask ratio must be in [0, 1]")
    if ratio == 0.0:
        return fmap
    idx = np.flatnonzero(fmap.silhouette.reshape(-1))
    k = int(round(ratio * len(idx)))
    rng = make_rng(seed, 0x4D41534B)
    chosen = rng.permutation(idx)[:k]
    data = fmap.data.copy()
    data.reshape(-1, fmap.channels)[chosen] = 0.0
    return FeatureMap(data, fmap.channel_names)
