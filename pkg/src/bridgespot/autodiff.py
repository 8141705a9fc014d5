"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation records a node holding its parents and a
closure that maps the output gradient to parent gradients. ``backward``
orders the recorded nodes topologically and runs each closure once.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from . import kernels

DTYPE = np.float64

_ids = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Operation parameters cannot produce a valid output."""


class ContractError(RuntimeError):
    """A caller violated an operation precondition."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Array with an optional gradient slot and a link into the tape."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_parents", "_backward", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        # always C-ordered: numpy/BLAS rounding depends on layout, and values
        # must not depend on whether an input came from a view
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # --- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # --- operators -------------------------------------------------------
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # --- differentiation -------------------------------------------------
    def backward(self, grad=None) -> None:
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
        out.tape_id = next(_ids)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- tape ------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root``, inputs before outputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor, grad=None) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` slots; callers zero them.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")
    order = topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=DTYPE)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return _record(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


# --- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"cannot concat shapes {[t.shape for t in tensors]}") from exc
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tensors, fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# --- reductions --------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


# --- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    # BLAS rounding depends on memory layout; contiguous operands make the
    # result a function of the values alone
    c = np.ascontiguousarray
    out = c(a.data) @ c(b.data)

    def fn(g):
        ga = (_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
              if a.requires_grad else None)
        gb = (_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
              if b.requires_grad else None)
        return ga, gb

    return _record(out, (a, b), fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for weight of shape (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = matmul(x, transpose(weight))
    return add(out, bias) if bias is not None else out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def fn(g):
        gm = np.moveaxis(g, axis, -1)
        om = np.moveaxis(out, axis, -1)
        t = gm - np.einsum("...i,...i->...", gm, om)[..., None]
        t *= om
        return (np.ascontiguousarray(np.moveaxis(t, -1, axis)),)

    return _record(out, (a,), fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise DimensionError("layer_norm over an empty axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def fn(g):
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gb = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _record(out, (x, gamma, beta), fn)


# --- convolution ----------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation over (C, H, W) or batched (N, C, H, W) input."""
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride={stride} / padding={padding}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise DimensionError(f"conv2d expects x (C,H,W)/(N,C,H,W) and 4-D weight, "
                             f"got {x.shape} and {weight.shape}")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    cout, cin, kh, kw = weight.shape
    if cin != c:
        raise DimensionError(f"conv2d: input channels {c} vs weight {weight.shape}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias {bias.shape} vs {cout} output channels")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if oh <= 0 or ow <= 0 or kh > h + 2 * padding or kw > w + 2 * padding:
        raise ConfigurationError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} "
                                 f"with padding {padding}")
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    cols = xd.reshape(n, c, h * w) if pointwise else kernels.im2col(
        np.ascontiguousarray(xd), kh, kw, stride, padding)
    w2 = weight.data.reshape(cout, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, cout, oh, ow)
    if not batched:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        g3 = g.reshape(n, cout, oh * ow)
        gw = gx = gb = None
        if weight.requires_grad:
            gw = np.einsum("nol,nkl->ok", g3, cols, optimize=True).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3)
            if pointwise:
                gx = gcols.reshape(n, c, h, w)
            else:
                gx = kernels.col2im(gcols, (n, c, h, w), kh, kw, stride, padding)
            if not batched:
                gx = gx[0]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record(out, parents, fn)


# --- resampling -----------------------------------------------------------------

def bilinear_resample(x: Tensor, ys, xs) -> Tensor:
    """Sample ``x`` (C, H, W) at the separable grid ``ys`` x ``xs`` (index space)."""
    if x.ndim != 3:
        raise DimensionError(f"bilinear_resample expects (C,H,W), got {x.shape}")
    ys = np.asarray(ys, dtype=DTYPE)
    xs = np.asarray(xs, dtype=DTYPE)
    out = kernels.bilinear_gather(np.ascontiguousarray(x.data), ys, xs)
    return _record(out, (x,), lambda g: (kernels.bilinear_scatter(g, x.shape, ys, xs),))


def interpolation_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights of shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def resample_sequence(x: Tensor, length: int) -> Tensor:
    """Linearly resample ``x`` (L, d) along the sequence axis to ``length`` rows."""
    if x.shape[-2] == length:
        return x
    return matmul(Tensor(interpolation_matrix(length, x.shape[-2])), x)


# --- losses -----------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``.

    Optional per-row ``weights`` turn the mean into ``sum(w * nll) / sum(w)``.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (n, classes), got {logits.shape}")
    targets = np.asarray(targets, dtype=np.intp)
    n, k = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"targets {targets.shape} vs logits {logits.shape}")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise IndexError(f"target index out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=DTYPE)
    denom = w.sum()
    rows = np.arange(n)
    loss = -(w * logp[rows, targets]).sum() / denom

    def fn(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (g * p * (w / denom)[:, None],)

    return _record(np.asarray(loss), (logits,), fn)


def bce_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean binary cross-entropy on raw logits, numerically stable."""
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise DimensionError(f"targets {t.shape} vs logits {logits.shape}")
    x = logits.data
    w = np.ones_like(x) if weights is None else np.broadcast_to(
        np.asarray(weights, dtype=DTYPE), x.shape)
    denom = w.sum()
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    loss = (w * per).sum() / denom
    return _record(np.asarray(loss), (logits,),
                   lambda g: (g * (_sigmoid(x) - t) * w / denom,))


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    """Mean smooth-L1 (Huber) loss with the quadratic/linear knee at ``beta``."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=DTYPE)
    if pred.shape != t.shape:
        raise DimensionError(f"smooth_l1: pred {pred.shape} vs target {t.shape}")
    if pred.size == 0:
        return _record(np.asarray(0.0), (pred,), lambda g: (np.zeros_like(pred.data),))
    d = pred.data - t
    ad = np.abs(d)
    quad = ad < beta
    per = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = d.size
    return _record(np.asarray(per.mean()), (pred,),
                   lambda g: (g * np.where(quad, d / beta, np.sign(d)) / n,))


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
