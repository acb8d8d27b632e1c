"""Point clouds, centering, and pinhole cameras.

A point cloud is an ``(N, 3)`` float array. Batched clouds ``(B, N, 3)`` are
accepted wherever the docstring says so; the centroid is always taken over the
point axis (``-2``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def as_cloud(points, dtype=np.float64) -> np.ndarray:
    pts = np.asarray(points, dtype=dtype)
    if pts.ndim == 1 and pts.shape[0] == 3:
        pts = pts[None, :]
    if pts.ndim < 2 or pts.shape[-1] != 3:
        raise InvalidInputError(f"expected (..., N, 3) points, got shape {pts.shape}")
    if pts.shape[-2] == 0:
        raise InvalidInputError("empty point cloud")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("point cloud contains non-finite coordinates")
    return pts


def centroid(points) -> np.ndarray:
    """Arithmetic mean over the point axis."""
    pts = np.asarray(points)
    if pts.ndim < 2 or pts.shape[-2] == 0:
        raise InvalidInputError("centroid of an empty cloud is undefined")
    return pts.mean(axis=-2)


def centralize(points) -> np.ndarray:
    """Translate the cloud so that its centroid sits at the origin.

    Works for any trailing feature width, so the same projector is applied
    to clouds and to noise tensors alike.
    """
    pts = np.asarray(points)
    if pts.ndim < 2 or pts.shape[-2] == 0:
        raise InvalidInputError("cannot centralize an empty cloud")
    return pts - pts.mean(axis=-2, keepdims=True)


def is_centered(points, tol=1e-6) -> bool:
    return bool(np.max(np.abs(centroid(points))) <= tol)


def normalize_to_unit_cube(points) -> np.ndarray:
    """Center the bounding box at the origin and scale uniformly into [-0.5, 0.5]^3."""
    pts = as_cloud(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent == 0.0:
        return pts - (lo + hi) / 2
    return (pts - (lo + hi) / 2) / extent


def rotation_about(axis, angle) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def rigid_transform(points, rotation, translation) -> np.ndarray:
    return np.asarray(points) @ np.asarray(rotation).T + np.asarray(translation)


@dataclass(frozen=True)
class Camera:
    """World-to-camera extrinsics plus pinhole intrinsics.

    A world point ``p`` maps to camera coordinates ``q = R p + T``; the camera
    looks down +z, with +x to the right and +y down the image.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise InvalidInputError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image size must be at least 1x1")

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), *,
                focal, width, height):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(R, -R @ eye, float(focal), float(focal),
                   width / 2.0, height / 2.0, int(width), int(height))

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "R": self.rotation.reshape(-1).tolist(),
            "T": self.translation.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "W": self.width, "H": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(np.reshape(d["R"], (3, 3)), d["T"], d["fx"], d["fy"],
                   d["cx"], d["cy"], int(d["W"]), int(d["H"]))


def project(cam: Camera, points):
    """Pinhole projection of world points.

    Returns ``(pixels, depth, valid)``: pixel coordinates ``(..., N, 2)``,
    camera-frame depth ``(..., N)`` and a validity mask that is False for
    points on or behind the image plane. Invalid pixels are NaN.
    """
    pts = np.asarray(points, dtype=np.float64)
    q = pts @ cam.rotation.T + cam.translation
    depth = q[..., 2]
    valid = depth > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(valid, depth, 1.0)
        u = cam.fx * q[..., 0] / safe + cam.cx
        v = cam.fy * q[..., 1] / safe + cam.cy
    pix = np.stack([u, v], axis=-1)
    pix[~valid] = np.nan
    return pix, depth, valid
