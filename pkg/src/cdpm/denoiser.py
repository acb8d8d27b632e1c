"""Noise-prediction network with hand-written reverse-mode gradients.

The network acts on a batch of clouds ``(B, N, ·)``. Every point is fed its
coordinates, its condition row and a sinusoidal embedding of ``t / T``.
Two block types alternate:

``point``   h <- silu(h W + b), applied to each point independently.
``global``  h <- silu([h, max_N h, mean_N h] W + b), which lets every point
            see a permutation-invariant summary of the whole cloud.

A final affine layer maps to 3 outputs and is zero-initialized, so an
untrained network predicts zero noise.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidInputError, InvalidStateError
from .rng import make_rng

CHECKPOINT_MAGIC = b"CDPM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    cond_width: int = 5
    hidden: int = 128
    blocks: tuple = ("point", "global", "point", "global")
    time_freqs: int = 8
    T: int = 1000
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for b in self.blocks:
            if b not in ("point", "global"):
                raise InvalidInputError(f"unknown block type {b!r}")

    @property
    def time_width(self) -> int:
        return 2 * self.time_freqs

    @property
    def input_width(self) -> int:
        return 3 + self.cond_width + self.time_width

    def layer_shapes(self) -> dict:
        shapes = {}
        width = self.input_width
        for i, kind in enumerate(self.blocks):
            fan_in = 3 * width if kind == "global" else width
            shapes[f"blocks.{i}.W"] = (fan_in, self.hidden)
            shapes[f"blocks.{i}.b"] = (self.hidden,)
            width = self.hidden
        shapes["out.W"] = (width, 3)
        shapes["out.b"] = (3,)
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.layer_shapes().values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**{k: (tuple(v) if k == "blocks" else v) for k, v in d.items()})


def time_embedding(t, T: int, freqs: int) -> np.ndarray:
    """``[sin(2^k pi t/T), cos(2^k pi t/T)]`` for k < freqs; shape ``(..., 2*freqs)``."""
    s = np.asarray(t, dtype=np.float64)[..., None] / T
    w = np.pi * 2.0 ** np.arange(freqs)
    return np.concatenate([np.sin(s * w), np.cos(s * w)], axis=-1)


def sigmoid(z):
    with np.errstate(over="ignore"):
        s = np.exp(-z)
    s += 1.0
    return np.reciprocal(s, out=s)


def silu(z):
    return z * sigmoid(z)


def silu_grad(z, s=None):
    """d silu / dz, reusing ``s = sigmoid(z)`` when available."""
    if s is None:
        s = sigmoid(z)
    g = 1.0 - s
    g *= z
    g += 1.0
    g *= s
    return g


def init_params(config: DenoiserConfig, seed: int = 0) -> dict:
    """He-uniform weights, zero biases, zero output layer."""
    rng = make_rng(seed, 0x494E4954)
    dtype = np.dtype(config.dtype)
    params = {}
    for name, shape in config.layer_shapes().items():
        if name.startswith("out.") or name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = np.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


@dataclass
class _Cache:
    inputs: list = field(default_factory=list)   # block inputs h_{i}
    pre: list = field(default_factory=list)      # pre-activations z_i
    gates: list = field(default_factory=list)    # sigmoid(z_i)
    argmax: list = field(default_factory=list)   # max-pool indices (global blocks)
    pooled: list = field(default_factory=list)   # (max, mean) per global block
    last: np.ndarray | None = None
    split: tuple = ()
    squeeze: bool = False


class Denoiser:
    """Callable ``eps = net(x_t, cond, t)``; ``backward`` follows the last forward."""

    def __init__(self, config: DenoiserConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        shapes = config.layer_shapes()
        if set(self.params) != set(shapes):
            raise InvalidInputError("parameter names do not match the architecture")
        for k, s in shapes.items():
            if self.params[k].shape != s:
                raise InvalidInputError(f"{k}: expected shape {s}, got {self.params[k].shape}")
        self._cache: _Cache | None = None

    @property
    def dtype(self):
        return self.params["out.W"].dtype

    def __call__(self, x, cond, t):
        return self.forward(x, cond, t, keep_cache=False)

    def forward(self, x, cond, t, keep_cache: bool = True) -> np.ndarray:
        cfg = self.config
        dt = self.dtype
        x = np.asarray(x, dtype=dt)
        cond = np.asarray(cond, dtype=dt)
        squeeze = x.ndim == 2
        if squeeze:
            x, cond = x[None], cond[None]
        B, N, _ = x.shape
        if x.shape[-1] != 3 or cond.shape[:2] != (B, N) or cond.shape[-1] != cfg.cond_width:
            raise InvalidInputError(
                f"expected x (B,N,3) and cond (B,N,{cfg.cond_width}); got {x.shape}, {cond.shape}")
        t = np.broadcast_to(np.asarray(t), (B,))
        if np.any(t < 1) or np.any(t > cfg.T):
            raise InvalidInputError(f"step outside 1..{cfg.T}")
        temb = time_embedding(t, cfg.T, cfg.time_freqs).astype(dt)
        h = np.concatenate([x, cond, np.broadcast_to(temb[:, None, :], (B, N, cfg.time_width))], axis=-1)
        cache = _Cache(split=(3, cfg.cond_width), squeeze=squeeze)
        p = self.params
        for i, kind in enumerate(cfg.blocks):
            W, b = p[f"blocks.{i}.W"], p[f"blocks.{i}.b"]
            cache.inputs.append(h)
            if kind == "point":
                z = h @ W + b
                cache.argmax.append(None)
                cache.pooled.append(None)
            else:
                w = h.shape[-1]
                idx = np.argmax(h, axis=1)  # first occurrence on ties
                hmax = np.take_along_axis(h, idx[:, None, :], axis=1)[:, 0]
                hmean = h.mean(axis=1)
                glob = hmax @ W[w:2 * w] + hmean @ W[2 * w:] + b
                z = h @ W[:w] + glob[:, None, :]
                cache.argmax.append(idx)
                cache.pooled.append((hmax, hmean))
            gate = sigmoid(z)
            cache.pre.append(z)
            cache.gates.append(gate)
            h = z * gate
        cache.last = h
        out = h @ p["out.W"] + p["out.b"]
        self._cache = cache if keep_cache else None
        return out[0] if squeeze else out

    predict_noise = __call__

    def backward(self, dout, cache: _Cache | None = None):
        """Gradients of a scalar loss given ``dout = dL/d(output)``.

        Returns ``(grads, dx, dcond)``. Max-pool gradients go to the first
        argmax point of each channel.
        """
        cache = cache if cache is not None else self._cache
        if cache is None:
            raise InvalidStateError("backward called without a cached forward pass")
        p = self.params
        dout = np.asarray(dout, dtype=self.dtype)
        if dout.ndim == 2:
            dout = dout[None]
        grads = {}
        h = cache.last
        grads["out.W"] = np.tensordot(h, dout, axes=([0, 1], [0, 1]))
        grads["out.b"] = dout.sum(axis=(0, 1))
        dh = dout @ p["out.W"].T
        for i in reversed(range(len(self.config.blocks))):
            W = p[f"blocks.{i}.W"]
            z = cache.pre[i]
            hin = cache.inputs[i]
            dz = dh * silu_grad(z, cache.gates[i])
            grads[f"blocks.{i}.b"] = dz.sum(axis=(0, 1))
            if cache.argmax[i] is None:
                grads[f"blocks.{i}.W"] = np.tensordot(hin, dz, axes=([0, 1], [0, 1]))
                dh = dz @ W.T
            else:
                w = hin.shape[-1]
                N = hin.shape[1]
                hmax, hmean = cache.pooled[i]
                dglob = dz.sum(axis=1)  # (B, hidden)
                grads[f"blocks.{i}.W"] = np.concatenate([
                    np.tensordot(hin, dz, axes=([0, 1], [0, 1])),
                    hmax.T @ dglob,
                    hmean.T @ dglob,
                ])
                dh = dz @ W[:w].T
                dh += (dglob @ W[2 * w:].T)[:, None, :] / N
                dmax = dglob @ W[w:2 * w].T  # (B, w)
                idx = cache.argmax[i]
                B = hin.shape[0]
                # one argmax per (batch, channel): indices are unique
                dh[np.arange(B)[:, None], idx, np.arange(w)[None, :]] += dmax
        nx, nc = cache.split
        if cache.squeeze:
            dh = dh[0]
        return grads, dh[..., :nx], dh[..., nx:nx + nc]

    # --- persistence ----------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self, extra)

    @classmethod
    def load(cls, path) -> tuple["Denoiser", dict]:
        return load_checkpoint(path)


def mse_loss(pred, target):
    """Mean squared error over every element, with its gradient w.r.t. ``pred``."""
    diff = np.asarray(pred) - np.asarray(target)
    return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff


def save_checkpoint(path, net: Denoiser, extra: dict | None = None) -> None:
    """Binary checkpoint: magic, version, length-prefixed JSON header, tensors.

    Each tensor is ``u32 name_len, name, u32 rank, u32 dims[rank], f32 data``.
    All integers little-endian.
    """
    header = {"architecture": net.config.to_dict()}
    if extra:
        header.update(extra)
    hbytes = json.dumps(header, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)), hbytes,
             struct.pack("<I", len(net.params))]
    for name in sorted(net.params):
        arr = np.ascontiguousarray(net.params[name], dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[Denoiser, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", buf, 4)
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        header = json.loads(buf[off:off + hlen].decode())
        off += hlen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        config = DenoiserConfig.from_dict(header["architecture"])
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if off + size > len(buf):
                raise DataError(f"{path}: truncated tensor {name}")
            params[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=off) \
                .reshape(dims).astype(config.dtype)
            off += size
    except struct.error as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes after last tensor")
    return Denoiser(config, params), header
