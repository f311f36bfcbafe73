"""Dense tensors with reverse-mode differentiation.

Every op records a node on an implicit tape: the output keeps references to
its parents and a closure that maps the output gradient to parent gradients.
``Tensor.backward`` walks the tape in reverse topological order, visiting
each node once.

Reductions use numpy kernels with a fixed call sequence; nothing here
reorders sums based on thread timing, so single-threaded runs are bitwise
reproducible. Cap BLAS threads with ``MST_THREADS`` (see ``threads``).
"""

from __future__ import annotations

import contextlib
import math
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_DTYPE = np.float32


class DimensionError(ValueError):
    """Raised when operand extents are incompatible."""


class UnsupportedConfigError(ValueError):
    """Raised for kernel/stride combinations an op does not implement."""


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (e.g. ``np.float64`` for grad checks)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def threads(n: int | None = None):
    """Limit BLAS threads; defaults to ``MST_THREADS`` or 1."""
    from threadpoolctl import threadpool_limits

    if n is None:
        n = int(os.environ.get("MST_THREADS", "1"))
    with threadpool_limits(limits=n):
        yield


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _contiguous(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray turns 0-d arrays into shape (1,); keep scalars scalar.
    arr = np.asarray(arr)
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


class Tensor:
    """An n-dimensional array that can track gradients.

    ``data`` is treated as immutable once built; only ``grad`` is written
    during ``backward``. Gradients accumulate across backward calls until
    ``zero_grad`` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        if arr.ndim > 0 and min(arr.shape) == 0:
            raise DimensionError(f"tensor extents must be positive, got {arr.shape}")
        self.data = _contiguous(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = _contiguous(data)
        out.grad = None
        out.name = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # autodiff ---------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf with ``requires_grad``.

        ``self`` must be a scalar unless an explicit seed ``grad`` is given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operators ------------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes or None)

    @property
    def T(self):
        return permute(self, None)


def _raise_scalar(shape):
    raise ValueError(f"item() needs a single element, got shape {shape}")


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), dtype=like.data.dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# elementwise --------------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), back)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return Tensor._from_op(ad / bd, (a, b), back)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def sqrt(x: Tensor) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0 rather than inf."""
    out = np.sqrt(x.data)

    def back(g):
        denom = 2.0 * out
        return (np.divide(g, denom, out=np.zeros_like(out), where=denom > 0),)

    return Tensor._from_op(out, (x,), back)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign to avoid overflow in exp
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gauss error function."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),)

    return Tensor._from_op(out, (x,), back)


# reductions and shape -----------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return Tensor._from_op(out, (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape
    out = x.data[idx]

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g) if _has_fancy(idx) else full.__setitem__(idx, g)
        return (full,)

    return Tensor._from_op(np.array(out), (x,), back)


def _has_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def back(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return parts

    return Tensor._from_op(out, tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return Tensor._from_op(out, tensors, back)


# linear algebra -----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul extents {a.shape} x {b.shape} do not chain")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(out, (a, b), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (x,), back)


def layer_norm(x: Tensor, axis: int, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-6) -> Tensor:
    """Normalize along ``axis`` to zero mean and unit variance, then apply gamma/beta.

    ``gamma``/``beta`` are 1-D with length ``x.shape[axis]``.
    """
    xd = x.data
    axis = axis % x.ndim
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = xd.shape[axis]
    bshape = [1] * x.ndim
    bshape[axis] = n
    parents = [x]
    gd = bd = None
    if gamma is not None:
        gd = gamma.data.reshape(bshape)
        parents.append(gamma)
    if beta is not None:
        bd = beta.data.reshape(bshape)
        parents.append(beta)
    out = xhat
    if gd is not None:
        out = out * gd
    if bd is not None:
        out = out + bd
    red = tuple(i for i in range(x.ndim) if i != axis)

    def back(g):
        gh = g * gd if gd is not None else g
        gx = inv * (gh - gh.mean(axis=axis, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=red).reshape(gamma.shape))
        if beta is not None:
            grads.append(g.sum(axis=red).reshape(beta.shape))
        return grads

    return Tensor._from_op(out, parents, back)


# convolution --------------------------------------------------------------------


def _out_extent(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise DimensionError(
            f"output extent ({n}+2*{pad}-{k})/{stride}+1 is not a positive integer")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0,
           groups: int = 1) -> Tensor:
    """Zero-padded 2-D cross-correlation of a ``C_in x H x W`` input.

    ``w`` has shape ``C_out x (C_in/groups) x k x k``. Patches are gathered
    into columns and contracted per group with one ``matmul``.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d expects CxHxW input and 4-D weight, got {x.shape}, {w.shape}")
    cin, h, wd = x.shape
    cout, cin_g, k, k2 = w.shape
    if k != k2:
        raise DimensionError("only square kernels are supported")
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise DimensionError(
            f"channels {cin}->{cout} with groups={groups} do not match weight {w.shape}")
    ho = _out_extent(h, k, stride, pad)
    wo = _out_extent(wd, k, stride, pad)
    xd, wdat = x.data, w.data
    g = groups
    cout_g = cout // g

    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # cols: g x (ho*wo) x (cin_g*k*k)
    cols = win.reshape(g, cin_g, ho, wo, k, k).transpose(0, 2, 3, 1, 4, 5).reshape(g, ho * wo, cin_g * k * k)
    wmat = wdat.reshape(g, cout_g, cin_g * k * k).transpose(0, 2, 1)
    out = np.matmul(cols, wmat)  # g x (ho*wo) x cout_g
    out = out.transpose(0, 2, 1).reshape(cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(cout, 1, 1)
    parents = [x, w] + ([bias] if bias is not None else [])

    def back(gout):
        go = gout.reshape(g, cout_g, ho * wo)  # g x cout_g x P
        gw = np.matmul(go, cols).reshape(cout, cin_g, k, k)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat, go)  # g x (cin_g*k*k) x P
            gcols = gcols.reshape(cin, k, k, ho, wo)
            gxp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=gout.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride] += gcols[:, i, j]
            gx = gxp[:, pad : pad + h, pad : pad + wd] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(1, 2)))
        return grads

    return Tensor._from_op(out, parents, back)


def conv2d_transpose(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Adjoint of a stride-2, 2x2, unpadded ``conv2d``; doubles H and W.

    ``w`` has shape ``C_in x C_out x 2 x 2`` (same tensor a matching
    ``conv2d`` would read as ``C_out' x C_in' x 2 x 2``).
    """
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"bad transpose-conv weight shape {w.shape}")
    k = w.shape[2]
    if (k, stride) != (2, 2):
        raise UnsupportedConfigError(f"conv2d_transpose supports k=2, stride=2 only, got k={k}, stride={stride}")
    if x.ndim != 3 or x.shape[0] != w.shape[0]:
        raise DimensionError(f"input {x.shape} does not match weight {w.shape}")
    cin, h, wd = x.shape
    cout = w.shape[1]
    xd, wdat = x.data, w.data
    xm = xd.reshape(cin, h * wd)
    wm = wdat.reshape(cin, cout * 4)
    y = np.matmul(wm.T, xm)  # (cout*4) x P
    out = y.reshape(cout, 2, 2, h, wd).transpose(0, 3, 1, 4, 2).reshape(cout, 2 * h, 2 * wd)
    if bias is not None:
        out = out + bias.data.reshape(cout, 1, 1)
    parents = [x, w] + ([bias] if bias is not None else [])

    def back(gout):
        gy = gout.reshape(cout, h, 2, wd, 2).transpose(0, 2, 4, 1, 3).reshape(cout * 4, h * wd)
        gx = np.matmul(wm, gy).reshape(cin, h, wd)
        gw = np.matmul(xm, gy.T).reshape(cin, cout, 2, 2)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(1, 2)))
        return grads

    return Tensor._from_op(out, parents, back)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
