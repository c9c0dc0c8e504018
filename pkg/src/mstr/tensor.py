"""Dense rank-2 tensors with a reverse-mode tape.

Every primitive records a node on the tape of its (first) taped input and
returns a new :class:`Tensor`.  Tensors without a tape are constants: ops on
them run eagerly and nothing is recorded.  Matrix products report their
multiply-accumulate counts to the tape's counter under the current scope.
"""
from __future__ import annotations

import math
from collections import Counter
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ContractError, ConfigurationError, DimensionError

DTYPES = {"single": np.float32, "double": np.float64}

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A rows x cols matrix, optionally attached to a tape."""

    __slots__ = ("data", "tape", "node_id", "name", "requires_grad")

    def __init__(self, data, tape: Optional["Tape"] = None, node_id: Optional[int] = None,
                 name: Optional[str] = None, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise DimensionError(f"tensors are rank-2, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"tensor dimensions must be >= 1, got {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.tape = tape
        self.node_id = node_id
        self.name = name
        self.requires_grad = requires_grad

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def precision(self) -> str:
        return "double" if self.data.dtype == np.float64 else "single"

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor({self.rows}x{self.cols}, {self.precision}, node={self.node_id})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))


@dataclass
class TapeNode:
    node_id: int
    op: str
    inputs: tuple[Optional[int], ...]
    output: Tensor
    backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
    saved: dict = field(default_factory=dict)


class Tape:
    """Execution record for one forward pass, plus its MAC counter."""

    def __init__(self, count_macs: bool = False):
        self.nodes: list[TapeNode] = []
        self.count_macs = count_macs
        self.macs: Counter = Counter()
        self._scope = "other"

    @contextmanager
    def scope(self, name: str):
        prev, self._scope = self._scope, name
        try:
            yield
        finally:
            self._scope = prev

    def add_macs(self, n: int) -> None:
        if self.count_macs:
            self.macs[self._scope] += int(n)

    def leaf(self, data, name: Optional[str] = None, requires_grad: bool = True) -> Tensor:
        t = Tensor(data, tape=self, name=name, requires_grad=requires_grad)
        t.node_id = len(self.nodes)
        self.nodes.append(TapeNode(t.node_id, "leaf", (), t))
        return t

    def push(self, op: str, inputs: Sequence[Tensor], out: np.ndarray, backward, saved=None) -> Tensor:
        rg = any(x.requires_grad for x in inputs)
        t = Tensor(out, tape=self, requires_grad=rg)
        t.node_id = len(self.nodes)
        ids = tuple(x.node_id if x.tape is self else None for x in inputs)
        self.nodes.append(TapeNode(t.node_id, op, ids, t, backward if rg else None, saved or {}))
        return t


def constant(data, precision: Optional[str] = None) -> Tensor:
    arr = np.asarray(data)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if precision is not None:
        arr = arr.astype(DTYPES[precision])
    return Tensor(arr)


def _tape_of(inputs: Sequence[Tensor]) -> Optional[Tape]:
    for x in inputs:
        if x.tape is not None:
            return x.tape
    return None


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward, saved=None) -> Tensor:
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(out)
    return tape.push(op, inputs, out, backward, saved)


def _count(inputs: Sequence[Tensor], n: int) -> None:
    tape = _tape_of(inputs)
    if tape is not None:
        tape.add_macs(n)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.rows}x{a.cols} by {b.rows}x{b.cols}")
    A, B = a.data, b.data
    _count((a, b), a.rows * a.cols * b.cols)

    def back(g):
        return g @ B.T, A.T @ g

    return _emit("matmul", (a, b), A @ B, back)


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def _broadcast_pair(op, a: Tensor, b: Tensor) -> bool:
    if a.shape == b.shape:
        return False
    if b.rows == 1 and b.cols == a.cols:
        return True
    raise DimensionError(f"{op}: shapes {a.rows}x{a.cols} and {b.rows}x{b.cols} do not broadcast")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x cols row broadcast over ``a``."""
    bcast = _broadcast_pair("add", a, b)

    def back(g):
        return g, (g.sum(axis=0, keepdims=True) if bcast else g)

    return _emit("add", (a, b), a.data + b.data, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bcast = _broadcast_pair("mul", a, b)
    A, B = a.data, b.data

    def back(g):
        gb = g * A
        return g * B, (gb.sum(axis=0, keepdims=True) if bcast else gb)

    return _emit("mul", (a, b), A * B, back)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), a.data.sum().reshape(1, 1),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.rows * a.cols
    shape = a.shape
    return _emit("mean", (a,), (a.data.sum() / n).reshape(1, 1),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),))


# ---------------------------------------------------------------- slicing

def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.cols:
        raise DimensionError(f"slice_cols [{start}:{stop}] out of range for {a.rows}x{a.cols}")
    shape, dt = a.shape, a.data.dtype

    def back(g):
        out = np.zeros(shape, dtype=dt)
        out[:, start:stop] = g
        return (out,)

    return _emit("slice_cols", (a,), a.data[:, start:stop].copy(), back)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.rows:
        raise DimensionError(f"slice_rows [{start}:{stop}] out of range for {a.rows}x{a.cols}")
    shape, dt = a.shape, a.data.dtype

    def back(g):
        out = np.zeros(shape, dtype=dt)
        out[start:stop] = g
        return (out,)

    return _emit("slice_rows", (a,), a.data[start:stop].copy(), back)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {sorted(rows)}")
    edges = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _emit("concat_cols", tuple(parts), np.concatenate([p.data for p in parts], axis=1), back)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {sorted(cols)}")
    edges = np.cumsum([0] + [p.rows for p in parts])

    def back(g):
        return tuple(g[edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _emit("concat_rows", tuple(parts), np.concatenate([p.data for p in parts], axis=0), back)


# ---------------------------------------------------------------- nonlinearities

def softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", (a,), s, back, {"s": s})


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF."""
    x = a.data
    cdf = ndtr(x).astype(x.dtype, copy=False)

    def back(g):
        pdf = np.exp(-0.5 * x * x) * x.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + x * pdf),)

    return _emit("gelu", (a,), x * cdf, back)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ContractError("layer_norm eps must be > 0")
    if gamma.shape != (1, a.cols) or beta.shape != (1, a.cols):
        raise DimensionError(f"layer_norm: gamma/beta must be 1x{a.cols}, got {gamma.shape}, {beta.shape}")
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    G = gamma.data

    def back(g):
        gx = g * G
        gin = inv * (gx - gx.mean(axis=1, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return gin, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _emit("layer_norm", (a, gamma, beta), xhat * G + beta.data, back)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / a.data.dtype.type(1.0 - rate)
    return _emit("dropout", (a,), a.data * keep, lambda g: (g * keep,))


# ---------------------------------------------------------------- temporal resampling

def avg_pool_time(x: Tensor, p: int) -> Tensor:
    """Mean of each run of ``p`` consecutive rows."""
    if p < 1:
        raise ConfigurationError(f"pooling factor must be >= 1, got {p}")
    if x.rows % p:
        raise ConfigurationError(f"avg_pool_time: {x.rows} rows not divisible by p={p}")
    if p == 1:
        return x
    t, f = x.rows // p, x.cols
    inv = x.data.dtype.type(1.0 / p)

    def back(g):
        return (np.repeat(g * inv, p, axis=0),)

    return _emit("avg_pool_time", (x,), x.data.reshape(t, p, f).mean(axis=1), back)


def upsample_nearest_time(x: Tensor, s: int) -> Tensor:
    """Repeat every row ``s`` times in place."""
    if s < 1:
        raise ConfigurationError(f"up-sampling factor must be >= 1, got {s}")
    if s == 1:
        return x
    t, f = x.shape

    def back(g):
        return (g.reshape(t, s, f).sum(axis=1),)

    return _emit("upsample_nearest_time", (x,), np.repeat(x.data, s, axis=0), back)


# ---------------------------------------------------------------- windowed attention kernels

def _check_windows(op, t: int, p: int):
    if p < 1 or t % p:
        raise ConfigurationError(f"{op}: sequence of {t} rows cannot be split into windows of {p}")


def window_scores(q: Tensor, k: Tensor, p: int, scale_by: float) -> Tensor:
    """Scaled dot products inside contiguous windows of ``p`` rows.

    Row ``r`` of the t x p result holds the scores of query ``r`` against the
    ``p`` keys of its own window.
    """
    if q.shape != k.shape:
        raise DimensionError(f"window_scores: query {q.shape} vs key {k.shape}")
    t, d = q.shape
    _check_windows("window_scores", t, p)
    w = t // p
    Q = q.data.reshape(w, p, d)
    K = k.data.reshape(w, p, d)
    c = q.data.dtype.type(scale_by)
    _count((q, k), t * p * d)

    def back(g):
        G = g.reshape(w, p, p) * c
        return (G @ K).reshape(t, d), (G.transpose(0, 2, 1) @ Q).reshape(t, d)

    return _emit("window_scores", (q, k), (Q @ K.transpose(0, 2, 1)).reshape(t, p) * c, back)


def window_apply(a: Tensor, v: Tensor, p: int) -> Tensor:
    """Weight the value rows of each window by that window's t x p probabilities."""
    t, d = v.shape
    if a.shape != (t, p):
        raise DimensionError(f"window_apply: weights {a.shape} do not match values {v.shape} at p={p}")
    _check_windows("window_apply", t, p)
    w = t // p
    A = a.data.reshape(w, p, p)
    V = v.data.reshape(w, p, d)
    _count((a, v), t * p * d)

    def back(g):
        G = g.reshape(w, p, d)
        return (G @ V.transpose(0, 2, 1)).reshape(t, p), (A.transpose(0, 2, 1) @ G).reshape(t, d)

    return _emit("window_apply", (a, v), (A @ V).reshape(t, d), back)


# ---------------------------------------------------------------- readout and loss

def segment_mean_rows(x: Tensor, segments: Sequence[tuple[int, int]]) -> Tensor:
    """Row means over ``(start, length)`` segments, one output row per segment."""
    for start, length in segments:
        if length < 1 or start < 0 or start + length > x.rows:
            raise DimensionError(f"segment ({start}, {length}) invalid for {x.rows} rows")
    X = x.data
    out = np.stack([X[s:s + n].mean(axis=0) for s, n in segments])
    shape, dt = x.shape, X.dtype

    def back(g):
        gin = np.zeros(shape, dtype=dt)
        for i, (s, n) in enumerate(segments):
            gin[s:s + n] += g[i] / n
        return (gin,)

    return _emit("segment_mean_rows", (x,), out, back)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood over rows, via log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B, C = logits.shape
    if labels.shape[0] != B:
        raise DimensionError(f"cross_entropy: {B} logit rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ContractError(f"cross_entropy: labels must lie in [0, {C}), got {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g[0, 0] / B),)

    return _emit("cross_entropy", (logits,), np.asarray(loss, dtype=logits.data.dtype).reshape(1, 1), back)


# ---------------------------------------------------------------- reverse pass

def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse accumulation from a scalar ``loss``.

    Returns gradients for every named leaf that requires grad; leaves that
    are not reached get a zero gradient.
    """
    if loss.tape is not tape:
        raise ContractError("loss tensor was not recorded on this tape")
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.rows}x{loss.cols}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1), dtype=loss.data.dtype)}
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        g = grads.get(node.node_id)
        if g is None or node.backward is None:
            continue
        for nid, gi in zip(node.inputs, node.backward(g)):
            if nid is None or gi is None or not tape.nodes[nid].output.requires_grad:
                continue
            if nid in grads:
                grads[nid] = grads[nid] + gi
            else:
                grads[nid] = gi
    out = {}
    for node in tape.nodes:
        t = node.output
        if node.op == "leaf" and t.requires_grad and t.name is not None:
            g = grads.get(node.node_id)
            out[t.name] = g if g is not None else np.zeros_like(t.data)
    return out


def tape_scope(*tensors: Tensor, name: str):
    """MAC-counter scope on the tape shared by ``tensors`` (no-op if untaped)."""
    tape = _tape_of(tensors)
    return tape.scope(name) if tape is not None else nullcontext()
