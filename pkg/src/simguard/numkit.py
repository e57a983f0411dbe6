"""Dense float64 kernel: layers with hand-written backward passes, Adam,
finite-difference gradient checking, seeded RNG streams and weight files.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Sparse
propagation uses ``scipy.sparse`` CSR matrices.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError

WEIGHT_MAGIC = b"SGWT"
NORM_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# randomness


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for ``seed``; extra ``keys`` derive independent sub-streams.

    String keys are hashed with CRC32 so streams are stable across runs and
    platforms (``hash()`` is salted per process).
    """
    spawn = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn)
    return np.random.Generator(np.random.PCG64(ss))


def check_finite(arr, what="value"):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite {what}")
    return arr


# ---------------------------------------------------------------------------
# graph normalisation


def gcn_normalize(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for a symmetric 0/1 adjacency."""
    n = adjacency.shape[0]
    a = sp.csr_matrix(adjacency, dtype=np.float64) + sp.identity(n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    a_hat = (d @ a @ d).tocsr()
    a_hat.sort_indices()
    return a_hat


def normalize_adjacency(g, ids=None) -> sp.csr_matrix:
    """Normalised adjacency with self-loops over the subgraph induced by ``ids``."""
    if ids is None:
        return gcn_normalize(g.adjacency)
    ids = np.unique(np.asarray(ids, dtype=np.int64))
    if ids.size == 0:
        raise ValueError("normalize_adjacency needs at least one node")
    if ids[0] < 0 or ids[-1] >= g.n_nodes:
        raise ValueError(f"node ids outside [0, {g.n_nodes})")
    return gcn_normalize(g.adjacency[ids][:, ids])


# ---------------------------------------------------------------------------
# layers


class Layer:
    params: list
    grads: list

    def __init__(self):
        self.params = []
        self.grads = []

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, w, b=None):
        super().__init__()
        self.params = [w] if b is None else [w, b]
        self.grads = [np.zeros_like(p) for p in self.params]

    def forward(self, x, training=False):
        self._x = x
        out = x @ self.params[0]
        if len(self.params) == 2:
            out = out + self.params[1]
        return out

    def backward(self, dout):
        w = self.params[0]
        self.grads[0] = self._x.T @ dout
        if len(self.params) == 2:
            self.grads[1] = dout.sum(axis=0)
        return dout @ w.T


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Propagate(Layer):
    """Left-multiplication by a fixed symmetric sparse matrix."""

    def __init__(self, a_hat):
        super().__init__()
        self.a_hat = a_hat

    def forward(self, x, training=False):
        return self.a_hat @ x

    def backward(self, dout):
        return self.a_hat.T @ dout


class RowL2Normalize(Layer):
    def __init__(self, floor: float = NORM_FLOOR):
        super().__init__()
        self.floor = floor

    def forward(self, x, training=False):
        norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
        self._n = np.maximum(norms, self.floor)
        self._active = norms > self.floor
        self._y = x / self._n
        return self._y

    def backward(self, dout):
        y, n = self._y, self._n
        proj = (y * dout).sum(axis=1, keepdims=True)
        dx = (dout - np.where(self._active, y * proj, 0.0)) / n
        return dx


class Sequential(Layer):
    """Chains layers; ``backward`` runs them in reverse and collects grads."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def set_params(self, values):
        values = list(values)
        for layer in self.layers:
            k = len(layer.params)
            layer.params = [np.asarray(v, dtype=np.float64) for v in values[:k]]
            values = values[k:]
        if values:
            raise ValueError("too many parameter arrays")

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


# ---------------------------------------------------------------------------
# losses


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels, index=None, weights=None):
    """Mean cross-entropy over rows ``index``; returns ``(loss, dlogits)``.

    ``weights`` optionally gives a per-class weight (weighted mean).
    """
    n = logits.shape[0]
    idx = np.arange(n) if index is None else np.asarray(index, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape[0] == n and idx.shape[0] != n:
        y = y[idx]
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(idx.size), y] - logsum
    w = np.ones(idx.size) if weights is None else np.asarray(weights, dtype=np.float64)[y]
    total = w.sum()
    loss = -(w * logp).sum() / total
    p = np.exp(z - logsum[:, None])
    p[np.arange(idx.size), y] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[idx] = p * (w / total)[:, None]
    return float(loss), dlogits


def l1_rows(pred, target):
    """Per-row L1 distance and the gradient of their mean w.r.t. ``pred``."""
    diff = pred - target
    per_row = np.abs(diff).sum(axis=1)
    dpred = np.sign(diff) / pred.shape[0]
    return per_row, dpred


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn: Callable, params: Sequence[np.ndarray], epsilon: float = 1e-4) -> float:
    """Maximum entry-wise relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)`` with one gradient array
    per parameter. Relative error per entry is
    ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)``.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss in grad_check")
    worst = 0.0
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64).reshape(p.shape)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            lp, _ = loss_fn(params)
            flat[k] = orig - epsilon
            lm, _ = loss_fn(params)
            flat[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError("non-finite loss in grad_check")
            num = (lp - lm) / (2.0 * epsilon)
            ana = gflat[k]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], 0, lr, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return replace(self, m=[a.copy() for a in self.m], v=[a.copy() for a in self.v])


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and Adam moments differ in count")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, m=new_m, v=new_v, step=t)


# ---------------------------------------------------------------------------
# weight files


def save_weights(path, tensors) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            a = np.asarray(t, dtype="<f8")
            a2 = a.reshape(1, -1) if a.ndim == 1 else a
            if a2.ndim != 2:
                raise ValueError("only 1-D and 2-D tensors can be saved")
            fh.write(struct.pack("<II", *a2.shape))
            fh.write(np.ascontiguousarray(a2).tobytes())


def load_weights(path) -> list:
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHT_MAGIC:
        raise DataError(f"{path}: not an SGWT weight file")
    (count,) = struct.unpack_from("<I", raw, 4)
    off = 8
    out = []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        nbytes = 8 * rows * cols
        if off + nbytes > len(raw):
            raise DataError(f"{path}: truncated tensor data")
        a = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
        out.append(a.reshape(rows, cols).astype(np.float64))
        off += nbytes
    return out


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
