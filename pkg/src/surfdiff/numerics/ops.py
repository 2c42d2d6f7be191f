"""Differentiable primitives.

Broadcasting is limited to a scalar operand or an operand whose shape equals
the trailing dimensions of the other (bias-style). Anything else needs an
explicit ``reshape``/``expand``.
"""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import ArgumentError
from .tensor import Tensor, as_tensor, make_result

LN_EPS = 1e-5


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    if big.shape[big.ndim - small.ndim :] != small.shape:
        raise ArgumentError(f"{op}: shapes {a.shape} and {b.shape} need an explicit reshape")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0 or int(np.prod(shape)) == 1:
        return g.sum().reshape(shape)
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, "sub", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, "mul", (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ArgumentError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    lead_s, lead_b = small.shape[:-2], big.shape[:-2]
    if lead_s and lead_b[len(lead_b) - len(lead_s) :] != lead_s:
        raise ArgumentError(f"matmul: batch dims {a.shape[:-2]} vs {b.shape[:-2]}")
    ad, bd = a.data, b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return make_result(np.matmul(ad, bd), "matmul", (a, b), back)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ArgumentError(f"reshape: {src} -> {tuple(shape)}") from exc
    return make_result(out, "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ArgumentError(f"transpose: bad axes {axes} for ndim {x.ndim}")
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,), lambda g: (g.transpose(inv),)
    )


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Repeat a size-1 axis ``n`` times."""
    if x.shape[axis] != 1:
        raise ArgumentError(f"expand: axis {axis} of {x.shape} is not size 1")
    shape = list(x.shape)
    shape[axis] = n
    out = np.broadcast_to(x.data, shape).copy()
    return make_result(out, "expand", (x,), lambda g: (g.sum(axis=axis, keepdims=True),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ArgumentError(f"concat: {[x.shape for x in xs]}") from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, "concat", xs, back)


def take(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Slice ``[start:stop]`` along ``axis``."""
    ax = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    src_shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return make_result(x.data[idx].copy(), "take", (x,), back)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if builtins.sum(sizes) != x.shape[axis]:
        raise ArgumentError(f"split: sizes {list(sizes)} do not sum to {x.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        out.append(take(x, start, start + s, axis))
        start += s
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    return make_result(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    flat = np.ascontiguousarray(x.data).ravel()
    y = kernels.gelu_forward(flat).reshape(x.shape)

    def back(g):
        gf = np.ascontiguousarray(g, dtype=flat.dtype).ravel()
        return (kernels.gelu_backward(flat, gf).reshape(flat.shape).reshape(g.shape),)

    return make_result(y, "gelu", (x,), back)


def silu(x: Tensor) -> Tensor:
    return mul(x, sigmoid(x))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return make_result(y, "exp", (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    d = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(d)
    return make_result(y, "log", (x,), lambda g: (g / d,))


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        y = np.sqrt(x.data)
    return make_result(y, "sqrt", (x,), lambda g: (g * 0.5 / y,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, "softmax", (x,), back)


def layernorm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis (eps inside the square root), then optional affine."""
    shape = x.shape
    d = shape[-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, d)
    xhat2, rstd = kernels.layernorm_forward(x2, eps)
    xhat = xhat2.reshape(shape)

    def back(g):
        g2 = np.ascontiguousarray(g, dtype=x2.dtype).reshape(-1, d)
        return (kernels.layernorm_backward(g2, xhat2, rstd).reshape(shape),)

    out = make_result(xhat, "layernorm", (x,), back)
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def embedding(table: Tensor, idx) -> Tensor:
    """Gather rows of ``table`` at integer indices ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ArgumentError("embedding: index out of range")
    shape, dtype = table.shape, table.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(table.data[idx], "embedding", (table,), back)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis)), "sum", (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis), 1.0 / n)
