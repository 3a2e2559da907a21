"""Dense-matrix reverse-mode automatic differentiation.

Every value is a 2-D float64 numpy array wrapped in a :class:`Node`. Operations
build the graph eagerly (define-by-run); :func:`backward` walks it in reverse
topological order and accumulates gradients into :class:`Parameter` leaves.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from himt.errors import DeterminismError, NumericError, ShapeError

_ids = itertools.count()
_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording parents (inference mode)."""
    prev = _recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2 dims, got shape {a.shape}")
    return a


def _check_finite(a: np.ndarray, op: str) -> None:
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite value produced by {op}")


class Node:
    __slots__ = ("id", "op", "parents", "value", "_backward")

    def __init__(self, value, op: str = "const", parents: tuple = (), backward=None):
        self.id = next(_ids)
        self.op = op
        self.value = value if isinstance(value, np.ndarray) and value.dtype == np.float64 and value.ndim == 2 else as_matrix(value)
        if _recording():
            self.parents = parents
            self._backward = backward
        else:
            self.parents = ()
            self._backward = None
        _check_finite(self.value, op)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


class Parameter(Node):
    """Trainable leaf. ``grad`` accumulates across backward calls until zeroed."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(as_matrix(value), dtype=np.float64), op="param")
        self.parents = ()
        self._backward = None
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def const(x) -> Node:
    return x if isinstance(x, Node) else Node(as_matrix(x))


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Node, b: Node) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- ops


def matmul(a, b) -> Node:
    a, b = const(a), const(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    out = a.value @ b.value

    def bw(g):
        return g @ b.value.T, a.value.T @ g

    return Node(out, "matmul", (a, b), bw)


def add(a, b) -> Node:
    a, b = const(a), const(b)
    _broadcast_shape("add", a, b)
    out = a.value + b.value
    sa, sb = a.shape, b.shape
    return Node(out, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    a, b = const(a), const(b)
    _broadcast_shape("sub", a, b)
    out = a.value - b.value
    sa, sb = a.shape, b.shape
    return Node(out, "add", (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Node:
    """Elementwise (Hadamard) product with row/column broadcasting."""
    a, b = const(a), const(b)
    _broadcast_shape("mul", a, b)
    out = a.value * b.value
    av, bv = a.value, b.value

    def bw(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return Node(out, "elementwise-product", (a, b), bw)


def scale(a, s: float) -> Node:
    a = const(a)
    return Node(a.value * s, "scale", (a,), lambda g: (g * s,))


def transpose(a) -> Node:
    a = const(a)
    return Node(a.value.T.copy(), "transpose", (a,), lambda g: (g.T,))


def softmax_rows(a) -> Node:
    a = const(a)
    _check_finite(a.value, "softmax_rows input")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Node(s, "softmax-rows", (a,), bw)


def tanh(a) -> Node:
    a = const(a)
    t = np.tanh(a.value)
    return Node(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a) -> Node:
    a = const(a)
    x = a.value
    # split by sign so exp never overflows
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return Node(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def relu(a) -> Node:
    a = const(a)
    mask = a.value > 0
    return Node(a.value * mask, "relu", (a,), lambda g: (g * mask,))


def log(a) -> Node:
    a = const(a)
    if (a.value <= 0).any():
        raise NumericError("log of non-positive value")
    v = a.value
    return Node(np.log(v), "log", (a,), lambda g: (g / v,))


def clamp_min(a, lo: float) -> Node:
    a = const(a)
    mask = a.value >= lo
    return Node(np.where(mask, a.value, lo), "clamp", (a,), lambda g: (g * mask,))


def sum(a) -> Node:  # noqa: A001
    a = const(a)
    shape = a.shape
    return Node(np.array([[a.value.sum()]]), "sum", (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean_rows(a) -> Node:
    """Column-wise mean over rows, giving a 1 x cols node."""
    a = const(a)
    m = a.shape[0]
    return Node(a.value.mean(axis=0, keepdims=True), "mean", (a,),
                lambda g: (np.repeat(g / m, m, axis=0),))


def concat_rows(parts: Sequence) -> Node:
    parts = [const(p) for p in parts]
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    out = np.concatenate([p.value for p in parts], axis=0)
    edges = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[edges[i]:edges[i + 1]] for i in range(len(parts)))

    return Node(out, "concat-rows", tuple(parts), bw)


def concat_cols(parts: Sequence) -> Node:
    parts = [const(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    out = np.concatenate([p.value for p in parts], axis=1)
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return Node(out, "concat-cols", tuple(parts), bw)


def slice_cols(a, start: int, stop: int) -> Node:
    a = const(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return Node(a.value[:, start:stop].copy(), "slice", (a,), bw)


def take(a, row: int, col: int) -> Node:
    """Single entry as a 1x1 node."""
    a = const(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[row, col] = g[0, 0]
        return (full,)

    return Node(a.value[row:row + 1, col:col + 1].copy(), "slice", (a,), bw)


def cumprod_cols(a) -> Node:
    """Running product along each row: out[:, r] = prod(a[:, :r+1])."""
    a = const(a)
    x = a.value
    out = np.cumprod(x, axis=1)
    n = x.shape[1]

    def bw(g):
        # products excluding x_j, no division so zeros are safe
        gx = np.zeros_like(x)
        for j in range(n):
            for r in range(j, n):
                others = np.prod(np.delete(x[:, : r + 1], j, axis=1), axis=1)
                gx[:, j] += g[:, r] * others
        return (gx,)

    return Node(out, "cumprod", (a,), bw)


def dropout(a, rate: float, rng: np.random.Generator | None) -> Node:
    """Inverted dropout; identity when ``rng`` is None or rate is 0."""
    a = const(a)
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, Node(keep))


# ---------------------------------------------------------------- backward


def _topo_order(root: Node) -> list[Node]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter.grad."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    grads = {loss.id: np.ones((1, 1))}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


# ---------------------------------------------------------------- checking


def gradient_check(
    forward: Callable[[], Node],
    params: Iterable[Parameter],
    h: float = 1e-5,
    n_samples: int | None = 20,
    seed: int = 0,
) -> float:
    """Max relative error between backprop gradients and central differences.

    ``forward`` must rebuild the graph from the current parameter values and
    return a 1x1 loss. Up to ``n_samples`` entries are drawn uniformly across
    all parameters; ``None`` checks every entry.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    base1 = forward().item()
    for p in params:
        p.zero_grad()
    loss = forward()
    if loss.item() != base1:
        raise DeterminismError(f"forward gave {base1!r} then {loss.item()!r}")
    backward(loss)

    entries = [(pi, idx) for pi, p in enumerate(params) for idx in np.ndindex(p.shape)]
    if n_samples is not None and n_samples < len(entries):
        pick = np.random.default_rng(seed).choice(len(entries), n_samples, replace=False)
        entries = [entries[i] for i in pick]

    worst = 0.0
    for pi, idx in entries:
        p = params[pi]
        orig = p.value[idx]
        p.value[idx] = orig + h
        fp = forward().item()
        p.value[idx] = orig - h
        fm = forward().item()
        p.value[idx] = orig
        cd = (fp - fm) / (2 * h)
        an = p.grad[idx]
        err = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
        worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
