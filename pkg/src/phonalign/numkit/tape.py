"""Reverse-mode differentiation over a recorded list of coarse numpy operations.

A :class:`Tape` records every operation applied to :class:`Var` objects that
belong to it.  :meth:`Tape.backward` replays the record in reverse and returns
the gradient of a scalar loss with respect to every named parameter.

Operations are deliberately coarse (a whole GRU sequence is one node) so the
record stays short and the per-node Python overhead is negligible.
"""
from __future__ import annotations

import numpy as np

from .. import _kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class Var:
    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return index(self, key)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"


class Tape:
    """Record of operations for one loss evaluation.

    Not thread-safe; confine a tape to the thread that builds it.
    """

    def __init__(self):
        self._values = []
        self._parents = []
        self._backward = []
        self._needs = []
        self._params = {}

    def __len__(self):
        return len(self._values)

    def _record(self, value, parents=(), backward=None, leaf_needs=False):
        value = np.asarray(value, dtype=np.float64)
        idx = len(self._values)
        needs = leaf_needs or any(self._needs[p] for p in parents)
        self._values.append(value)
        self._parents.append(tuple(parents))
        # nodes that depend only on constants never need a backward pass
        self._backward.append(backward if needs else None)
        self._needs.append(needs)
        return Var(self, idx, value)

    def param(self, name, value):
        """Register a named leaf whose gradient :meth:`backward` will report."""
        if name in self._params:
            return Var(self, self._params[name], self._values[self._params[name]])
        v = self._record(np.array(value, dtype=np.float64), leaf_needs=True)
        self._params[name] = v.idx
        return v

    def const(self, value):
        return self._record(value)

    def params(self, weights):
        """Register every array in ``weights`` and return a dict of Vars."""
        return {k: self.param(k, w) for k, w in weights.items()}

    def backward(self, loss):
        """Gradient of scalar ``loss`` with respect to every registered parameter.

        Parameters not reachable from ``loss`` get an exactly-zero gradient.
        """
        if loss.tape is not self:
            raise ContractError("loss variable belongs to another tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        grads = [None] * (loss.idx + 1)
        grads[loss.idx] = np.ones_like(loss.value)
        for i in range(loss.idx, -1, -1):
            g = grads[i]
            if g is None or self._backward[i] is None:
                continue
            parent_grads = self._backward[i](g)
            for p, pg in zip(self._parents[i], parent_grads):
                if pg is None or not self._needs[p]:
                    continue
                if grads[p] is None:
                    grads[p] = np.array(pg, dtype=np.float64)
                else:
                    grads[p] = grads[p] + pg
        out = {}
        for name, idx in self._params.items():
            g = grads[idx] if idx < len(grads) else None
            out[name] = np.zeros_like(self._values[idx]) if g is None else g
        return out


def _lift(tape, x):
    if isinstance(x, Var):
        return x
    return tape.const(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise ContractError("at least one operand must be a tape variable")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(a.value + b.value, (a.idx, b.idx),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(a.value - b.value, (a.idx, b.idx),
                        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    return tape._record(av * bv, (a.idx, b.idx),
                        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul of {av.shape} and {bv.shape}")
    return tape._record(av @ bv, (a.idx, b.idx), lambda g: (g @ bv.T, av.T @ g))


def linear(x, W, b=None):
    """``x @ W + b`` for x of any leading shape."""
    xv = x.value
    if xv.shape[-1] != W.value.shape[0]:
        raise ShapeError(f"linear input dim {xv.shape[-1]} != weight rows {W.value.shape[0]}")
    lead = xv.shape[:-1]
    flat = reshape(x, (-1, xv.shape[-1])) if xv.ndim != 2 else x
    out = matmul(flat, W)
    if b is not None:
        out = add(out, b)
    if xv.ndim != 2:
        out = reshape(out, lead + (W.value.shape[1],))
    return out


def reshape(a, shape):
    src = a.value.shape
    return a.tape._record(a.value.reshape(shape), (a.idx,), lambda g: (g.reshape(src),))


def index(a, key):
    src = a.value.shape
    parts = key if isinstance(key, tuple) else (key,)
    fancy = any(isinstance(k, (np.ndarray, list)) for k in parts)

    def back(g):
        out = np.zeros(src)
        if fancy:
            np.add.at(out, key, g)
        else:
            out[key] += g
        return (out,)

    return a.tape._record(a.value[key], (a.idx,), back)


def concat(xs, axis=-1):
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._record(np.concatenate([x.value for x in xs], axis=axis),
                        tuple(x.idx for x in xs), back)


def stack(xs, axis=0):
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return tape._record(np.stack([x.value for x in xs], axis=axis), tuple(x.idx for x in xs), back)


def tanh(a):
    y = np.tanh(a.value)
    return a.tape._record(y, (a.idx,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape._record(y, (a.idx,), lambda g: (g * y * (1.0 - y),))


def relu(a):
    on = a.value > 0
    return a.tape._record(np.where(on, a.value, 0.0), (a.idx,), lambda g: (g * on,))


def absolute(a):
    s = np.sign(a.value)
    return a.tape._record(np.abs(a.value), (a.idx,), lambda g: (g * s,))


def square(a):
    v = a.value
    return a.tape._record(v * v, (a.idx,), lambda g: (2.0 * g * v,))


def total(a):
    """Sum of all entries, as a scalar node."""
    src = a.value.shape
    return a.tape._record(np.sum(a.value), (a.idx,), lambda g: (np.broadcast_to(g, src).copy(),))


def mean(a):
    src = a.value.shape
    n = max(a.value.size, 1)
    return a.tape._record(np.mean(a.value) if a.value.size else 0.0, (a.idx,),
                          lambda g: (np.full(src, float(g) / n),))


def weighted_sum(a, weights):
    """``sum(a * weights)`` with constant weights."""
    w = np.asarray(weights, dtype=np.float64)
    src = a.value.shape
    return a.tape._record(np.sum(a.value * w), (a.idx,),
                          lambda g: (np.broadcast_to(g * w, src).copy(),))


def row_distance(a, b):
    """Euclidean distance between matching rows of ``a`` and ``b``.

    At zero distance the subgradient 0 is used.
    """
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"row_distance of {a.value.shape} and {b.value.shape}")
    diff = a.value - b.value
    d = np.sqrt(np.sum(diff * diff, axis=-1))

    def back(g):
        safe = np.where(d > 0, d, 1.0)
        coef = np.where(d > 0, g / safe, 0.0)[..., None]
        return (coef * diff, -coef * diff)

    return tape._record(d, (a.idx, b.idx), back)


def bce_with_logits(logits, target, weights=None):
    """Mean binary cross-entropy of sigmoid(logits) against constant targets in [0, 1]."""
    x = logits.value
    t = np.asarray(target, dtype=np.float64)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=np.float64)
    wsum = max(float(np.sum(w)), 1e-300)
    # log(1+exp(-|x|)) form is stable for large |x|
    loss_each = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    p = 0.5 * (1.0 + np.tanh(0.5 * x))

    def back(g):
        return (float(g) * w * (p - t) / wsum,)

    return logits.tape._record(np.sum(w * loss_each) / wsum, (logits.idx,), back)


def masked_mse(pred, target, mask):
    """Mask-weighted mean squared error; a 0/1 mask averages over the kept entries."""
    p = pred.value
    t = np.asarray(target, dtype=np.float64)
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), p.shape)
    n = max(float(np.sum(m)), 1.0)
    diff = p - t

    def back(g):
        return (float(g) * 2.0 * m * diff / n,)

    return pred.tape._record(np.sum(m * diff * diff) / n, (pred.idx,), back)


def gru_sequence(x, h0, W, U, b, mask=None):
    """Masked GRU recurrence over a time-major batch.

    x : Var (T, B, D); h0 : Var (B, H); W (D, 3H), U (H, 3H), b (3H,)
    Returns a Var of shape (T+1, B, H) whose first row is ``h0``.
    """
    tape = _tape_of(x, h0, W, U, b)
    x, h0, W, U, b = (_lift(tape, v) for v in (x, h0, W, U, b))
    xv, Wv, Uv = x.value, W.value, U.value
    if xv.ndim != 3:
        raise ShapeError(f"gru input must be (T, B, D), got {xv.shape}")
    T, B, D = xv.shape
    H = Uv.shape[0]
    if Wv.shape != (D, 3 * H) or Uv.shape != (H, 3 * H) or b.value.shape != (3 * H,):
        raise ShapeError(f"gru weights {Wv.shape}, {Uv.shape}, {b.value.shape} do not fit input dim {D}")
    if h0.value.shape != (B, H):
        raise ShapeError(f"h0 shape {h0.value.shape} != {(B, H)}")
    m = np.ones((T, B)) if mask is None else np.asarray(mask, dtype=np.float64)
    xw = (xv.reshape(T * B, D) @ Wv + b.value).reshape(T, B, 3 * H)
    hs, z, r, c = _kernels.gru_seq_forward(xw, m, h0.value, Uv)

    def back(g):
        dxw, dh0, dU = _kernels.gru_seq_backward(g, m, hs, z, r, c, Uv)
        flat = dxw.reshape(T * B, 3 * H)
        dx = (flat @ Wv.T).reshape(T, B, D)
        dW = xv.reshape(T * B, D).T @ flat
        db = flat.sum(axis=0)
        return dx, dh0, dW, dU, db

    return tape._record(hs, (x.idx, h0.idx, W.idx, U.idx, b.idx), back)
