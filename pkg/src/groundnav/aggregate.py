"""Multi-view feature fusion: one transformer encoder layer plus a softmax-weighted sum.

Rows are views. The encoder is pre-normalization with residuals and no
positional encoding::

    X1 = V  + MHSA(norm1(V))
    V' = X1 + relu(norm2(X1) @ W1 + b1) @ W2 + b2

Fusion scores each transformed view with a shared linear map ``w . v' + b``
and returns the softmax-weighted sum of the transformed views.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from .core import StateError

MAGIC = b"GVAG"
FORMAT_VERSION = 1
NORM_VAR_FLOOR = 1e-5


class ShapeError(ValueError):
    pass


class Mode(str, enum.Enum):
    AVERAGE = "average"
    ATTENTION = "attention"


@dataclass(frozen=True, eq=False)
class EncoderParams:
    d: int
    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    norm1_gain: np.ndarray
    norm1_bias: np.ndarray
    norm2_gain: np.ndarray
    norm2_bias: np.ndarray
    fusion_w: np.ndarray
    fusion_b: float = 0.0

    def __post_init__(self):
        d = self.d
        if self.heads < 1 or d % self.heads:
            raise ShapeError(f"d={d} not divisible by heads={self.heads}")
        for name, shape in _shape_table(d).items():
            if name == "fusion_b":
                continue
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "fusion_b", float(self.fusion_b))

    @classmethod
    def zeros(cls, d: int = 32, heads: int = 1) -> EncoderParams:
        """All projection, feed-forward and fusion weights zero; unit norm gains."""
        arrays = {n: np.zeros(s) for n, s in _shape_table(d).items()}
        arrays["norm1_gain"] = np.ones(d)
        arrays["norm2_gain"] = np.ones(d)
        arrays["fusion_b"] = 0.0
        return cls(d=d, heads=heads, **arrays)

    @classmethod
    def seeded(cls, seed: int = 0, d: int = 32, heads: int = 1) -> EncoderParams:
        """Pseudorandom weights: numpy PCG64 normals scaled by 1/sqrt(d), rounded to float32.

        Norm gains start at 1 and every bias at 0.
        """
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d)
        arrays = {}
        for name, shape in _shape_table(d).items():
            if name.startswith("norm") or name.startswith("b") or name == "fusion_b":
                continue
            arrays[name] = _f32(rng.standard_normal(shape) * scale)
        base = cls.zeros(d, heads)
        return replace(base, **arrays)

    def with_fusion(self, w, b: float = 0.0) -> EncoderParams:
        return replace(self, fusion_w=_f32(np.asarray(w, dtype=np.float64)), fusion_b=float(np.float32(b)))

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<III", FORMAT_VERSION, self.d, self.heads)]
        for name in _shape_table(self.d):
            out.append(np.asarray(getattr(self, name), dtype="<f4").tobytes(order="C"))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> EncoderParams:
        if data[:4] != MAGIC:
            raise ValueError("not a parameter file (bad magic)")
        version, d, heads = struct.unpack_from("<III", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version {version}")
        offset = 16
        arrays = {}
        for name, shape in _shape_table(d).items():
            count = int(np.prod(shape)) if shape else 1
            chunk = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            arrays[name] = float(chunk[0]) if name == "fusion_b" else chunk.astype(np.float64).reshape(shape)
        if offset != len(data):
            raise ValueError(f"parameter file has {len(data) - offset} trailing bytes")
        return cls(d=d, heads=heads, **arrays)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> EncoderParams:
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def _shape_table(d: int) -> dict[str, tuple[int, ...]]:
    names = [f.name for f in fields(EncoderParams)][2:]
    shapes = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "w1": (d, 4 * d), "b1": (4 * d,), "w2": (4 * d, d), "b2": (d,),
        "norm1_gain": (d,), "norm1_bias": (d,), "norm2_gain": (d,), "norm2_bias": (d,),
        "fusion_w": (d,), "fusion_b": (),
    }
    return {n: shapes[n] for n in names}


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def read_header(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise ValueError("not a parameter file (bad magic)")
    version, d, heads = struct.unpack_from("<III", data, 4)
    return {"magic": MAGIC.decode(), "version": version, "d": d, "heads": heads, "bytes": len(data)}


def _normalize(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = np.maximum(x.var(axis=-1, keepdims=True), NORM_VAR_FLOOR)
    return (x - mean) / np.sqrt(var) * gain + bias


def _softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _as_batch(views, d: int) -> np.ndarray:
    v = np.asarray(views, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise ShapeError(f"expected an n x {d} view batch with n >= 1, got shape {v.shape}")
    if v.shape[1] != d:
        raise ShapeError(f"view width {v.shape[1]} does not match encoder width {d}")
    if not np.all(np.isfinite(v)):
        raise ValueError("view batch has non-finite values")
    return v


def encoder_forward(views, p: EncoderParams) -> np.ndarray:
    v = _as_batch(views, p.d)
    n, d, h = v.shape[0], p.d, p.heads
    dh = d // h

    x = _normalize(v, p.norm1_gain, p.norm1_bias)
    q = (x @ p.wq).reshape(n, h, dh).transpose(1, 0, 2)
    k = (x @ p.wk).reshape(n, h, dh).transpose(1, 0, 2)
    val = (x @ p.wv).reshape(n, h, dh).transpose(1, 0, 2)
    attn = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh))
    mixed = (attn @ val).transpose(1, 0, 2).reshape(n, d)
    x1 = v + mixed @ p.wo

    y = _normalize(x1, p.norm2_gain, p.norm2_bias)
    return x1 + np.maximum(y @ p.w1 + p.b1, 0.0) @ p.w2 + p.b2


def attention_weights(transformed, p: EncoderParams) -> np.ndarray:
    v = _as_batch(transformed, p.d)
    return _softmax(v @ p.fusion_w + p.fusion_b)


def aggregate_views(views, mode: Mode | str, p: EncoderParams | None = None) -> np.ndarray:
    mode = Mode(mode)
    if len(views) == 0:
        raise StateError("cannot aggregate an empty view list")
    if mode is Mode.AVERAGE:
        v = np.asarray(views, dtype=np.float64)
        return v.mean(axis=0)
    if p is None:
        raise ValueError("attention mode needs encoder parameters")
    transformed = encoder_forward(views, p)
    return attention_weights(transformed, p) @ transformed
