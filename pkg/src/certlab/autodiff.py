"""Dense float64 tensors with a reverse-mode tape.

A :class:`Tensor` wraps a numpy array.  Tensors created through :meth:`Tape.leaf`
are differentiable; every operation that touches a taped tensor appends a record
to that tape.  Tensors without a tape are constants and operations on them only
compute values, which is the no-tape fast path used for certification.

Subgradient convention at breakpoints: the zero branch.  ``relu'(0) = 0``,
``abs'(0) = 0``, and ``maximum``/``minimum`` route the gradient of a tie to the
second operand (so ``maximum(x, 0)`` agrees with ``relu``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands of an operation have incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class TapeError(RuntimeError):
    pass


@dataclass
class Record:
    op: str
    inputs: tuple[int, ...]          # node ids, -1 for constants
    consts: tuple                    # input values for constant operands (None when taped)
    out: int
    forward: Callable
    backward: Callable


@dataclass
class Tape:
    """Ordered record of primitive operations."""

    records: list[Record] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    leaves: list[int] = field(default_factory=list)

    def leaf(self, value) -> "Tensor":
        arr = np.array(value, dtype=np.float64)
        node = len(self.values)
        self.values.append(arr)
        self.leaves.append(node)
        return Tensor(arr, self, node)

    def _push(self, op, inputs, value, forward, backward) -> "Tensor":
        node = len(self.values)
        self.values.append(value)
        ids = tuple(t.node if t.tape is self else -1 for t in inputs)
        consts = tuple(None if t.tape is self else t.value for t in inputs)
        self.records.append(Record(op, ids, consts, node, forward, backward))
        return Tensor(value, self, node)

    def replay(self, leaf_values: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every recorded value from the leaves, in order."""
        vals = list(self.values)
        if leaf_values is not None:
            if len(leaf_values) != len(self.leaves):
                raise TapeError("replay: wrong number of leaf values")
            for node, v in zip(self.leaves, leaf_values):
                vals[node] = np.asarray(v, dtype=np.float64)
        for rec in self.records:
            args = [vals[i] if i >= 0 else c for i, c in zip(rec.inputs, rec.consts)]
            vals[rec.out] = rec.forward(*args)
        return vals

    def backward(self, output: "Tensor", seed=None) -> dict[int, np.ndarray]:
        if output.tape is not self:
            raise TapeError("output was not produced on this tape")
        if seed is None:
            if output.value.size != 1:
                raise TapeError(f"gradient needs a scalar output, got shape {output.shape}")
            seed = np.ones_like(output.value)
        adj: dict[int, np.ndarray] = {output.node: np.asarray(seed, dtype=np.float64)}
        for rec in reversed(self.records):
            if rec.out > output.node:
                continue
            g = adj.pop(rec.out, None)
            if g is None:
                continue
            args = [self.values[i] if i >= 0 else c for i, c in zip(rec.inputs, rec.consts)]
            grads = rec.backward(g, self.values[rec.out], *args)
            for i, gi in zip(rec.inputs, grads):
                if i < 0 or gi is None:
                    continue
                if i in adj:
                    adj[i] = adj[i] + gi
                else:
                    adj[i] = gi
        return adj


class Tensor:
    __slots__ = ("value", "tape", "node")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to Tensor

    def __init__(self, value, tape: Tape | None = None, node: int = -1):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = "taped" if self.tape is not None else "const"
        return f"Tensor({tag}, shape={self.shape})"

    def __len__(self):
        return len(self.value)

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __neg__(self): return neg(self)
    def __getitem__(self, idx): return getitem(self, idx)

    @property
    def T(self):
        return swapaxes(self)

    def sum(self, axis=None):
        return tsum(self, axis)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def const(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tape_of(op: str, ts: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError(f"{op}: operands live on different tapes")
            tape = t.tape
    return tape


def apply(op: str, inputs: Sequence, forward: Callable, backward: Callable) -> Tensor:
    """Run a primitive; record it when any input is taped.

    ``backward(g, out, *input_values)`` returns one gradient (or None) per input.
    """
    ts = [as_tensor(t) for t in inputs]
    out = forward(*[t.value for t in ts])
    tape = _tape_of(op, ts)
    if tape is None:
        return Tensor(out)
    return tape._push(op, ts, out, forward, backward)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(np.shape(a), np.shape(b))
    except ValueError:
        raise ShapeError(op, np.shape(a), np.shape(b)) from None


def _binary(op, fwd, da, db):
    def run(a, b):
        a, b = as_tensor(a), as_tensor(b)
        _check_broadcast(op, a.value, b.value)

        def backward(g, out, x, y):
            return (unbroadcast(da(g, out, x, y), np.shape(x)),
                    unbroadcast(db(g, out, x, y), np.shape(y)))
        return apply(op, (a, b), fwd, backward)
    run.__name__ = op
    return run


add = _binary("add", np.add, lambda g, o, x, y: g, lambda g, o, x, y: g)
sub = _binary("sub", np.subtract, lambda g, o, x, y: g, lambda g, o, x, y: -g)
mul = _binary("mul", np.multiply, lambda g, o, x, y: g * y, lambda g, o, x, y: g * x)
div = _binary("div", np.divide, lambda g, o, x, y: g / y, lambda g, o, x, y: -g * o / y)
maximum = _binary("maximum", np.maximum,
                  lambda g, o, x, y: g * (x > y), lambda g, o, x, y: g * (x <= y))
minimum = _binary("minimum", np.minimum,
                  lambda g, o, x, y: g * (x < y), lambda g, o, x, y: g * (x >= y))


def neg(a) -> Tensor:
    return apply("neg", (a,), np.negative, lambda g, o, x: (-g,))


def relu(a) -> Tensor:
    return apply("relu", (a,), lambda x: np.maximum(x, 0.0), lambda g, o, x: (g * (x > 0),))


def tabs(a) -> Tensor:
    return apply("abs", (a,), np.abs, lambda g, o, x: (g * np.sign(x),))


def square(a) -> Tensor:
    return apply("square", (a,), np.square, lambda g, o, x: (2.0 * g * x,))


def select(mask, a, b) -> Tensor:
    """Elementwise ``a`` where ``mask`` else ``b``; the mask is not differentiated."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("select", a.value, b.value)
    try:
        np.broadcast_shapes(mask.shape, a.shape, b.shape)
    except ValueError:
        raise ShapeError("select", mask.shape, a.shape, b.shape) from None

    def backward(g, out, x, y):
        return (unbroadcast(np.where(mask, g, 0.0), np.shape(x)),
                unbroadcast(np.where(mask, 0.0, g), np.shape(y)))
    return apply("select", (a, b), lambda x, y: np.where(mask, x, y), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul", a.shape, b.shape)
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g, out, x, y):
        if y.ndim == 1:
            gx = g[..., None] * y if x.ndim > 1 else g * y
            gy = (np.swapaxes(x, -1, -2) @ g[..., None])[..., 0] if x.ndim > 1 else g * x
            return unbroadcast(gx, x.shape), unbroadcast(gy, y.shape)
        if x.ndim == 1:
            gx = (y @ g[..., None])[..., 0]
            gy = x[:, None] * g[..., None, :]
            return unbroadcast(gx, x.shape), unbroadcast(gy, y.shape)
        gx = g @ np.swapaxes(y, -1, -2)
        gy = np.swapaxes(x, -1, -2) @ g
        return unbroadcast(gx, x.shape), unbroadcast(gy, y.shape)
    return apply("matmul", (a, b), np.matmul, backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def backward(g, out, x):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)
    return apply("sum", (a,), lambda x: np.sum(x, axis=axis, keepdims=keepdims), backward)


def tmax(a, axis=-1) -> Tensor:
    """Reduce by maximum; the gradient goes to the first maximizer."""
    a = as_tensor(a)

    def backward(g, out, x):
        idx = np.argmax(x, axis=axis)
        gx = np.zeros_like(x)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)
    return apply("max", (a,), lambda x: np.max(x, axis=axis), backward)


def logsumexp(a, axis=-1) -> Tensor:
    a = as_tensor(a)

    def forward(x):
        m = np.max(x, axis=axis, keepdims=True)
        return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))

    def backward(g, out, x):
        p = np.exp(x - np.expand_dims(out, axis))
        return (p * np.expand_dims(g, axis),)
    return apply("logsumexp", (a,), forward, backward)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, idx, g)
        return (gx,)
    return apply("getitem", (a,), lambda x: x[idx], backward)


def take_rows(a, cols) -> Tensor:
    """``a[i, cols[i]]`` for a 2-D tensor."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(len(cols))
    return getitem(a, (rows, cols))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return apply("reshape", (a,), lambda x: np.reshape(x, shape),
                 lambda g, o, x: (np.reshape(g, x.shape),))


def swapaxes(a, ax1=-1, ax2=-2) -> Tensor:
    return apply("swapaxes", (a,), lambda x: np.swapaxes(x, ax1, ax2),
                 lambda g, o, x: (np.swapaxes(g, ax1, ax2),))


def expand(a, axis) -> Tensor:
    return apply("expand", (a,), lambda x: np.expand_dims(x, axis),
                 lambda g, o, x: (np.reshape(g, x.shape),))


def concat(ts: Sequence, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def forward(*xs):
        return np.concatenate(xs, axis=axis)

    def backward(g, out, *xs):
        return tuple(np.split(g, splits, axis=axis))
    try:
        return apply("concat", ts, forward, backward)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None


def custom(op: str, inputs: Sequence, out: np.ndarray, backward: Callable,
           forward: Callable | None = None) -> Tensor:
    """Record an externally computed value (e.g. an LP optimum) with its own VJP.

    ``forward`` is used by :meth:`Tape.replay`; when omitted, replay returns ``out``.
    """
    ts = [as_tensor(t) for t in inputs]
    tape = _tape_of(op, ts)
    if tape is None:
        return Tensor(out)
    fwd = forward if forward is not None else (lambda *xs: out)
    return tape._push(op, ts, out, fwd, backward)


# -- public entry points -----------------------------------------------------

def forward(expr: Callable[..., Tensor], *inputs) -> tuple[Tensor, Tape]:
    """Evaluate ``expr`` on fresh leaves; returns (value, tape)."""
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    return expr(*leaves), tape


def gradient(tape: Tape, output: Tensor) -> list[np.ndarray]:
    """d output / d leaf for every leaf of ``tape``, in leaf order."""
    adj = tape.backward(output)
    return [adj.get(n, np.zeros_like(tape.values[n])) for n in tape.leaves]


def grad(output: Tensor, wrt: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    if output.tape is None:
        return [np.zeros_like(w.value) for w in wrt]
    adj = output.tape.backward(output, seed)
    return [adj.get(w.node, np.zeros_like(w.value)) for w in wrt]


def finite_diff_check(expr: Callable[..., Tensor], inputs: Sequence, h: float = 1e-5) -> float:
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|) using central differences.

    NaN coordinates count as failures (the result is then ``inf``).
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out, tape = forward(expr, *inputs)
    g_ad = gradient(tape, out)
    worst = 0.0
    for k, x in enumerate(inputs):
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(value(expr(*[const(v) for v in inputs])))
            flat[j] = orig - h
            fm = float(value(expr(*[const(v) for v in inputs])))
            flat[j] = orig
            g_fd = (fp - fm) / (2 * h)
            err = abs(g_ad[k].reshape(-1)[j] - g_fd) / max(1.0, abs(g_fd))
            if not np.isfinite(err):
                return float("inf")
            worst = max(worst, err)
    return worst
