"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every vector-Jacobian product is itself written with :class:`Tensor` ops, so
gradients can be differentiated again (``grad(..., create_graph=True)``).
The zero-centered gradient penalty relies on that.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_RECORDING = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


@contextlib.contextmanager
def _recording(flag: bool):
    global _RECORDING
    prev = _RECORDING
    _RECORDING = flag
    try:
        yield
    finally:
        _RECORDING = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "vjp", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _RECORDING and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
    return out


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return g


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(neg(g), b.shape) if b.requires_grad else None,
        )

    return _make(a.data - b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (
            _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None,
            _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None,
        )

    return _make(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _make(a.data / b.data, (a, b), vjp)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if p == 1:
        return a
    return _make(a.data**p, (a,), lambda g: (mul(g, mul(p, power(a, p - 1))),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def vjp(g):
        return (div(g, mul(2.0, out)),)

    out = _make(out_data, (a,), vjp)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (mul(g, out),)

    out = _make(np.exp(a.data), (a,), vjp)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),))


def tanh(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _make(np.tanh(a.data), (a,), vjp)
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _make(_sigmoid_np(a.data), (a,), vjp)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _make(data, (a,), lambda g: (mul(g, sigmoid(a)),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    # piecewise-linear: the local slope is a constant w.r.t. further differentiation
    # (scaling the bool array directly is much faster than np.where here)
    mask = slope + (1.0 - slope) * (a.data > 0)
    return _make(a.data * mask, (a,), lambda g: (mul(g, mask),))


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (mul(g, sign),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (mul(g, mask),))


# linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (
            matmul(g, transpose(b)) if a.requires_grad else None,
            matmul(transpose(a), g) if b.requires_grad else None,
        )

    return _make(a.data @ b.data, (a, b), vjp)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` as a single node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)

    def vjp(g):
        return (
            matmul(g, transpose(w)) if x.requires_grad else None,
            matmul(transpose(x), g) if w.requires_grad else None,
            tsum(g, axis=0) if b.requires_grad else None,
        )

    return _make(x.data @ w.data + b.data, (x, w, b), vjp)


def _standardize_backward(gxhat: np.ndarray, xhat: np.ndarray, inv_std, axis: int) -> np.ndarray:
    n = xhat.shape[axis]
    m1 = gxhat.sum(axis=axis, keepdims=True) * (1.0 / n)
    m2 = (gxhat * xhat).sum(axis=axis, keepdims=True) * (1.0 / n)
    return (gxhat - m1 - xhat * m2) * inv_std


def batch_norm_train(x, scale, shift, eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Batch-statistics normalization with learned scale/shift.

    Returns the output and the (mean, biased variance) used. The backward
    pass is closed-form and only first-order differentiable.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    n = x.shape[0]
    mu = x.data.sum(axis=0) * (1.0 / n)
    centered = x.data - mu
    var = (centered * centered).sum(axis=0) * (1.0 / n)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def vjp(g):
        if _RECORDING:
            raise NotImplementedError("batch_norm_train does not support higher-order gradients")
        gd = g.data
        gx = None
        if x.requires_grad:
            gx = Tensor(_standardize_backward(gd * scale.data, xhat, inv_std, 0))
        g_scale = Tensor((gd * xhat).sum(axis=0)) if scale.requires_grad else None
        g_shift = Tensor(gd.sum(axis=0)) if shift.requires_grad else None
        return gx, g_scale, g_shift

    out = _make(xhat * scale.data + shift.data, (x, scale, shift), vjp)
    return out, mu, var


def group_norm(x, scale, shift, groups: int, eps: float) -> Tensor:
    """Per-row group standardization followed by per-channel scale/shift.

    First-order differentiable only; see ``nn.group_normalize`` for the
    composite (twice-differentiable) standardization.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    n, c = x.shape
    xg = x.data.reshape(n, groups, c // groups)
    k = c // groups
    mu = xg.sum(axis=2, keepdims=True) * (1.0 / k)
    centered = xg - mu
    var = (centered * centered).sum(axis=2, keepdims=True) * (1.0 / k)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv_std).reshape(n, c)

    def vjp(g):
        if _RECORDING:
            raise NotImplementedError("group_norm does not support higher-order gradients")
        gd = g.data
        gx = None
        if x.requires_grad:
            gxhat = (gd * scale.data).reshape(n, groups, k)
            gx = Tensor(_standardize_backward(gxhat, xhat.reshape(n, groups, k), inv_std, 2).reshape(n, c))
        g_scale = Tensor((gd * xhat).sum(axis=0)) if scale.requires_grad else None
        g_shift = Tensor(gd.sum(axis=0)) if shift.requires_grad else None
        return gx, g_scale, g_shift

    return _make(xhat * scale.data + shift.data, (x, scale, shift), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (transpose(g),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, orig),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _make(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, orig),)
    )


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    orig = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            axes = tuple(ax % len(orig) for ax in axes)
            kept = tuple(1 if i in axes else s for i, s in enumerate(orig))
            g = reshape(g, kept)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(orig))
        return (broadcast_to(g, orig),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = math.prod(a.shape[ax] for ax in axes)
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                out.append(None)
                continue
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(index)))
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _make(a.data[index], (a,), lambda g: (scatter(g, index, orig),))


def scatter(g, index, shape) -> Tensor:
    """Zeros of ``shape`` with ``g`` added at ``index`` (adjoint of getitem)."""
    g = as_tensor(g)
    data = np.zeros(shape)
    np.add.at(data, index, g.data)
    return _make(data, (g,), lambda h: (getitem(h, index),))


# reverse sweep


def _toposort(roots: Iterable[Tensor]) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(r, False) for r in roots if r.requires_grad]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    grad_output=None,
    create_graph: bool = False,
) -> list[Tensor | None]:
    """Gradients of ``output`` (seeded with ``grad_output``) w.r.t. ``inputs``.

    Inputs that the output does not depend on get ``None``.
    """
    if grad_output is None:
        if output.data.size != 1:
            raise ValueError("grad_output is required for non-scalar outputs")
        grad_output = np.ones_like(output.data)
    seed = grad_output if isinstance(grad_output, Tensor) else Tensor(grad_output)
    if seed.shape != output.shape:
        raise ValueError(f"grad_output shape {seed.shape} != output shape {output.shape}")

    grads: dict[int, Tensor] = {id(output): seed}
    with _recording(create_graph):
        for node in reversed(_toposort([output])):
            g = grads.get(id(node))
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = add(grads[key], pg) if key in grads else pg
    return [grads.get(id(t)) for t in inputs]
