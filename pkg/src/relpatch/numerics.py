"""Dense tensors with reverse-mode differentiation.

Storage is a numpy array; each differentiable op records its parents and a
closure mapping the output gradient to per-parent gradients. ``backward``
walks the graph in reverse topological order.

Precision follows the inputs: float64 for gradient checks, float32 for
training. Constants mixed into an op are cast to the tensor's dtype.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_grad_enabled = True

LAYERNORM_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


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


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


class Tensor:
    """N-dimensional float array that can take part in reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic accessors ---------------------------------------------------

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
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    # -- graph -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        self.grad = np.asarray(grad, dtype=self.dtype) if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None:
                continue
            parent_grads = node._backward(node.grad)
            for p, g in zip(node._parents, parent_grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
            # intermediates are single-use: release graph and buffers
            node.grad = None
            node._parents = ()
            node._backward = None

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self) -> Tensor:
        return self.swapaxes(-1, -2)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a.dtype)
    b = _as_tensor(b)
    return _as_tensor(a, b.dtype), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,))


def _c(x: np.ndarray) -> np.ndarray:
    return x if x.flags.c_contiguous else np.ascontiguousarray(x)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = _c(a.data), _c(b.data)
    if bd.ndim == 2:
        # (..., m, k) @ (k, n): one flat GEMM
        k, n = bd.shape
        flat = ad.reshape(-1, k)
        out = (flat @ bd).reshape(*ad.shape[:-1], n)

        def backward(g):
            g2 = _c(g).reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = flat.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make(out, (a, b), backward)

    def backward(g):
        g = _c(g)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ _c(np.swapaxes(bd, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(_c(np.swapaxes(ad, -1, -2)) @ g, b.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance, then scale and shift."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layernorm over an empty last dimension")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm affine params must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = ggamma = gbeta = None
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=lead)
        if beta.requires_grad:
            gbeta = g.sum(axis=lead)
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (
                gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * (xd * xd * xd))
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), backward)


def _check_finite(value: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{what} produced a non-finite value")


def softmax_ce(logits: Tensor, labels) -> Tensor:
    """Mean over rows of -log softmax(logits)[label]."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_ce expects n x K logits, got shape {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label outside [0, {k})")
    labels = labels.astype(np.int64)
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    se = e.sum(axis=1, keepdims=True)
    lse = (np.log(se) + zmax)[:, 0]
    rows = np.arange(n)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=z.dtype)
    _check_finite(loss, "softmax_ce")

    def backward(g):
        p = e / se
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(loss, (logits,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over all entries."""
    target = _as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    loss = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    _check_finite(loss, "mse")
    scale = 2.0 / max(diff.size, 1)

    def backward(g):
        gd = g * scale * diff
        return gd, -gd

    return _make(loss, (pred, target), backward)


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (n_out x n_in) linear-interpolation matrix, half-pixel centers.

    Output sample ``o`` reads source coordinate ``(o + 0.5) * n_in / n_out - 0.5``
    clamped to ``[0, n_in - 1]``.
    """
    if n_in < 1 or n_out < 1:
        raise DimensionError(f"resize sizes must be >= 1, got {n_in} -> {n_out}")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    w_hi = src - lo
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - w_hi)
    np.add.at(m, (rows, hi), w_hi)
    return m


def bilinear_resize(img, out_h: int, out_w: int):
    """Bilinear resize of a C x h x w image (half-pixel centers).

    Accepts an ndarray (returns an ndarray) or a Tensor (returns a
    differentiable Tensor).
    """
    data = img.data if isinstance(img, Tensor) else np.asarray(img)
    if data.ndim != 3:
        raise DimensionError(f"bilinear_resize expects C x h x w, got shape {data.shape}")
    _, h, w = data.shape
    if min(h, w, out_h, out_w) < 1:
        raise DimensionError(f"cannot resize {h}x{w} to {out_h}x{out_w}")
    dtype = data.dtype if data.dtype.kind == "f" else np.float64
    rh = resize_matrix(h, out_h, dtype)
    rw = resize_matrix(w, out_w, dtype)
    if isinstance(img, Tensor):
        return matmul(matmul(Tensor(rh), img), Tensor(rw.T.copy()))
    return rh @ data.astype(dtype, copy=False) @ rw.T


@dataclass(frozen=True)
class GradReport:
    max_relative_error: float
    worst_parameter: str
    analytic: float
    numeric: float
    checked: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_relative_error < tol


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    eps: float = 1e-5,
    *,
    max_per_param: int | None = None,
    seed: int = 0,
    floor: float = 1e-5,
) -> GradReport:
    """Compare backprop gradients of ``f()`` with central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps elements with vanishing gradient from dominating. With
    ``max_per_param`` set, a seeded random subset of each tensor is checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not isinstance(params, Mapping):
        params = {f"param{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.requires_grad = True
        p.zero_grad()

    out = f()
    if out.size != 1:
        raise DimensionError("grad_check needs a scalar function")
    _check_finite(out.data, "grad_check objective")
    out.backward()
    rng = np.random.default_rng(seed)

    worst = GradReport(0.0, "", 0.0, 0.0)
    checked = 0
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, max_per_param, replace=False))
        for k in idx:
            orig = flat[k]
            with no_grad():
                flat[k] = orig + eps
                fp = f().data
                flat[k] = orig - eps
                fm = f().data
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective while perturbing {name}[{k}]")
            num = float((fp - fm) / (2 * eps))
            ana = float(analytic.reshape(-1)[k])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if rel > worst.max_relative_error or not worst.worst_parameter:
                worst = GradReport(rel, f"{name}[{k}]", ana, num)
    for p in params.values():
        p.zero_grad()
    return GradReport(worst.max_relative_error, worst.worst_parameter, worst.analytic, worst.numeric, checked)
