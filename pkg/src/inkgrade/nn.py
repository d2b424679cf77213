"""Neural-network building blocks on numpy.

Plain stride-1 'same' 3x3 convolutions via im2col, 2x2 max pooling, dense
layers, layer norm and softmax cross-entropy, each with a hand-written
backward pass, plus Adam and a binary checkpoint container.  Everything is
dtype-agnostic so gradient checks can run the whole model in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError


# -- layers ---------------------------------------------------------------------


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    """Stride-1 'same' convolution, channels last.

    x: (N,H,W,C), w: (3,3,C,F), b: (F,) -> out (N,H,W,F), cache.
    Implemented as nine shifted matmul taps, which avoids im2col gathers.
    """
    n, h, wd, c = x.shape
    f = w.shape[-1]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, wd, f), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            out += xp[:, u : u + h, v : v + wd, :] @ w[u, v]
    if b is not None:
        out += b
    return out, xp


def conv3x3_backward(dout: np.ndarray, w: np.ndarray, xp: np.ndarray, need_dx: bool = True):
    n, h, wd, f = dout.shape
    c = w.shape[2]
    dflat = dout.reshape(-1, f)
    dw = np.empty_like(w)
    for u in range(3):
        for v in range(3):
            patch = np.ascontiguousarray(xp[:, u : u + h, v : v + wd, :])
            dw[u, v] = patch.reshape(-1, c).T @ dflat
    db = dflat.sum(axis=0)
    dx = None
    if need_dx:
        dxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                dxp[:, u : u + h, v : v + wd, :] += dout @ w[u, v].T
        dx = dxp[:, 1:-1, 1:-1, :]
    return dx, dw, db


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def maxpool2_forward(x: np.ndarray):
    """2x2 stride-2 max pool, channels last; even H and W required."""
    quads = np.stack([x[:, 0::2, 0::2, :], x[:, 0::2, 1::2, :],
                      x[:, 1::2, 0::2, :], x[:, 1::2, 1::2, :]], axis=-1)
    idx = quads.argmax(axis=-1)
    out = np.take_along_axis(quads, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    idx, x_shape = cache
    flat = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(flat, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, 0::2, 0::2, :] = flat[..., 0]
    dx[:, 0::2, 1::2, :] = flat[..., 1]
    dx[:, 1::2, 0::2, :] = flat[..., 2]
    dx[:, 1::2, 1::2, :] = flat[..., 3]
    return dx


def global_avg_pool_forward(x: np.ndarray):
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dout: np.ndarray, x_shape) -> np.ndarray:
    n, h, w, c = x_shape
    return np.broadcast_to(dout[:, None, None, :], x_shape) / (h * w)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, x


def dense_backward(dout: np.ndarray, w: np.ndarray, x: np.ndarray):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray):
    """Mean NLL over the batch and its gradient w.r.t. the logits."""
    n = probs.shape[0]
    eps = np.finfo(probs.dtype).tiny
    loss = -np.log(np.maximum(probs[np.arange(n), labels], eps)).mean()
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def layernorm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_backward(dout: np.ndarray, cache):
    xhat, inv, g = cache
    d = xhat.shape[-1]
    dg = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    db = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / d)
    return dx, dg, db


# -- optimizer --------------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: dict, grads: dict, state: AdamState, cfg: AdamConfig) -> None:
    """One in-place Adam update; iteration order is fixed by sorted names."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for name in sorted(params):
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        params[name] -= cfg.lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)


# -- checkpoints ------------------------------------------------------------------

_MAGIC = b"IGCK"
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """JSON header (metadata + tensor directory) followed by raw little-endian
    blobs in directory order."""
    directory = []
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        code = arr.dtype.newbyteorder("<").str
        if code not in _DTYPES:
            arr = arr.astype("<f4")
            code = "<f4"
        directory.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(arr.astype(code).tobytes())
    header = json.dumps({"meta": meta, "tensors": directory}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise OSError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    if data[:4] != _MAGIC:
        raise FormatError(f"not a checkpoint file: {path}")
    (header_len,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    offset = 8 + header_len
    tensors = {}
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        blob = data[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise FormatError("checkpoint truncated")
        tensors[entry["name"]] = np.frombuffer(blob, dtype=dtype).reshape(entry["shape"]).copy()
        offset += nbytes
    return header["meta"], tensors
