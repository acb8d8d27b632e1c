"""Point-cloud and feature-map file formats."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .conditioning import CHANNELS, FeatureMap
from .errors import DataError

FMAP_MAGIC = b"FMAP"


def write_xyz(path, points) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()))


def read_xyz(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        pts = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: malformed XYZ line") from exc
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"{path}: expected three columns per line")
    return pts


def write_ply(path, points) -> None:
    """Binary little-endian PLY with a single float32 x/y/z vertex element."""
    pts = np.ascontiguousarray(np.asarray(points).reshape(-1, 3), dtype="<f4")
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(pts)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "end_header\n").encode("ascii")
    Path(path).write_bytes(header + pts.tobytes())


def read_ply(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    end = buf.find(b"end_header\n")
    if not buf.startswith(b"ply\n") or end < 0:
        raise DataError(f"{path}: not a PLY file")
    header = buf[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise DataError(f"{path}: only binary_little_endian PLY is supported")
    count = None
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts[:1] == ["element"]:
            raise DataError(f"{path}: unsupported element {parts[1]!r}")
        elif parts[:1] == ["property"]:
            props.append((parts[1], parts[2]))
    if count is None or props != [("float", "x"), ("float", "y"), ("float", "z")]:
        raise DataError(f"{path}: expected vertex element with float x, y, z")
    body = buf[end + len(b"end_header\n"):]
    if len(body) != 12 * count:
        raise DataError(f"{path}: expected {12 * count} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(count, 3).astype(np.float64)


def write_fmap(path, fmap: FeatureMap) -> None:
    """16-byte header (``FMAP``, u32 W, H, C) then float32 rows (H, W, C)."""
    data = np.ascontiguousarray(fmap.data, dtype="<f4")
    H, W, C = data.shape
    Path(path).write_bytes(FMAP_MAGIC + struct.pack("<III", W, H, C) + data.tobytes())


def read_fmap(path) -> FeatureMap:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != FMAP_MAGIC:
        raise DataError(f"{path}: not a feature map")
    W, H, C = struct.unpack_from("<III", buf, 4)
    if len(buf) != 16 + 4 * W * H * C:
        raise DataError(f"{path}: size does not match {W}x{H}x{C} header")
    data = np.frombuffer(buf, dtype="<f4", offset=16).reshape(H, W, C).copy()
    names = CHANNELS if C == len(CHANNELS) else tuple(f"c{i}" for i in range(C))
    return FeatureMap(data, names)


def write_pgm(path, fmap: FeatureMap, channel: int | str = 0) -> None:
    """Binary 8-bit PGM of one channel, linearly stretched to 0..255."""
    if isinstance(channel, str):
        channel = list(fmap.channel_names).index(channel)
    img = fmap.data[..., channel].astype(np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    H, W = pix.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + pix.tobytes())
