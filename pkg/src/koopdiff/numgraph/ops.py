"""Differentiable primitives.

Each primitive computes its value eagerly and, when a tape is active and any
input is tracked, records a vector-Jacobian closure. Elementwise binary ops
accept equal shapes, or one operand whose shape equals the other's shape
without its leading (batch) axis.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import DimensionError, Tensor, active_tape, as_tensor


def _emit(value: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(p.tracked_on(tape) for p in parents):
        tape.record(out, parents, vjp)
    return out


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    if a.shape == b.shape:
        return a.shape
    if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
        return a.shape
    if b.ndim == a.ndim + 1 and b.shape[1:] == a.shape:
        return b.shape
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.data, b.data
    return _emit(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D operands, or a batched 3-D ``a`` against a 2-D ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2, 3) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data

    def vjp(g):
        ga = g @ bv.T
        if av.ndim == 1:
            gb = np.outer(av, g)
        else:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit(av @ bv, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected 2-D tensor, got shape {a.shape}")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        value = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _emit(value, (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat: no operands")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} along axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _emit(
        np.concatenate([t.data for t in ts], axis=ax),
        ts,
        lambda g: tuple(np.split(g, splits, axis=ax)),
    )


def slice(a, start: int, stop: int, axis: int = -1) -> Tensor:  # noqa: A001 - mirrors the primitive name
    a = as_tensor(a)
    ax = axis % a.ndim
    n = a.shape[ax]
    if not (0 <= start < stop <= n):
        raise DimensionError(f"slice: range [{start}, {stop}) invalid for axis {axis} of shape {a.shape}")
    idx = [np.s_[:]] * a.ndim
    idx[ax] = np.s_[start:stop]
    idx = tuple(idx)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _emit(a.data[idx].copy(), (a,), vjp)


def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))
    ax = axis % a.ndim
    return _emit(a.data.sum(axis=ax), (a,), lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis % a.ndim]
    return scale(sum(a, axis), 1.0 / n)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so large |x| never overflows exp
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def mse(a, b) -> Tensor:
    """Mean of squared differences over every element."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    d = a.data - b.data
    n = d.size
    return _emit(np.asarray((d * d).sum() / n), (a, b), lambda g: (2.0 * float(g) / n * d, -2.0 * float(g) / n * d))


def l2sq(a) -> Tensor:
    """Sum of squares (squared Frobenius norm)."""
    a = as_tensor(a)
    x = a.data
    return _emit(np.asarray((x * x).sum()), (a,), lambda g: (2.0 * float(g) * x,))


def stop_gradient(x) -> Tensor:
    """Same value, never recorded: nothing flows back through this edge."""
    x = as_tensor(x)
    return Tensor(x.data.copy())
