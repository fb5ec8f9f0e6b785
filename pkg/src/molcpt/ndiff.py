"""A small reverse-mode autodiff engine over dense float64 numpy arrays.

Every op returns a :class:`Tensor`. When any input requires gradients the
result records its parents and a closure mapping the output gradient to the
input gradients; :func:`backward` replays these in reverse topological order.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_CHECKED = True


class NonFiniteError(FloatingPointError):
    pass


@contextmanager
def checked(enabled: bool = True):
    """Toggle the NaN/Inf check on every op result (on by default)."""
    global _CHECKED
    prev, _CHECKED = _CHECKED, enabled
    try:
        yield
    finally:
        _CHECKED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    __array_priority__ = 1000

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

    @property
    def T(self):
        return transpose(self)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _CHECKED and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def stop_gradient(a: Tensor) -> Tensor:
    """Identity in the forward pass; no gradient flows back through it."""
    return Tensor(a.data)


# --- linear algebra and shape --------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def _sum_backward(shape: tuple[int, ...], axis: int | None, keepdims: bool) -> Callable:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return back


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(np.asarray(out), (a,), _sum_backward(a.shape, axis, keepdims))


def exact_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """:func:`sum` with correctly rounded results, so the value does not depend on element order."""
    if axis is None:
        out = np.asarray(math.fsum(a.data.ravel()))
        if keepdims:
            out = out.reshape((1,) * a.ndim)
    else:
        out = np.apply_along_axis(math.fsum, axis, a.data)
        if keepdims:
            out = np.expand_dims(out, axis)
    return _make(np.asarray(out, dtype=np.float64), (a,), _sum_backward(a.shape, axis, keepdims))


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis, keepdims), 1.0 / n)


def sq_frobenius(a: Tensor) -> Tensor:
    return _make(np.asarray(np.sum(a.data * a.data)), (a,), lambda g: (2.0 * g * a.data,))


# --- softmax family ------------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return _make(p, (a,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),))


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


# --- indexing and segments -----------------------------------------------------

def gather_rows(a: Tensor, index) -> Tensor:
    """``a[index]`` along axis 0 (embedding lookup)."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    return _make(a.data[index], (a,), lambda g: (kernels.scatter_add_rows(g, index, n),))


def pick(a: Tensor, index) -> Tensor:
    """``a[i, index[i]]`` for a 2-D tensor."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def back(g):
        out = np.zeros_like(a.data)
        out[rows, index] = g
        return (out,)

    return _make(a.data[rows, index], (a,), back)


def segment_sum(a: Tensor, segments, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != a.shape[0]:
        raise ValueError("segment_sum: one segment id per row required")
    return _make(kernels.scatter_add_rows(a.data, segments, n_segments), (a,), lambda g: (g[segments],))


def segment_softmax(a: Tensor, segments, n_segments: int) -> Tensor:
    """Softmax over the rows sharing a segment id, independently per column."""
    segments = np.asarray(segments, dtype=np.int64)
    mx = kernels.segment_max(a.data, segments, n_segments)
    e = np.exp(a.data - mx[segments])
    denom = kernels.scatter_add_rows(e, segments, n_segments)
    p = e / denom[segments]

    def back(g):
        dot = kernels.scatter_add_rows(g * p, segments, n_segments)
        return (p * (g - dot[segments]),)

    return _make(p, (a,), back)


# --- backward ------------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. leaves.

    Returns a map from tensor to gradient for every reachable leaf that
    requires grad, plus zeros for any tensor in ``wrt`` that is unreachable.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo(loss)):
            g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
            if node._backward is None:
                leaves[id(node)] = node
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = np.array(pg, dtype=np.float64)
    out = {leaves[k]: grads.get(k, np.zeros_like(leaves[k].data)) for k in leaves}
    for t in wrt or ():
        if t not in out:
            out[t] = np.zeros_like(t.data)
    return out


def _central_differences(loss_fn: Callable[[], Tensor], p: Tensor, h: float) -> np.ndarray:
    p.data = np.ascontiguousarray(p.data)
    numeric = np.zeros_like(p.data)
    flat, nflat = p.data.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn().data)
        flat[i] = orig - h
        fm = float(loss_fn().data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * h)
    return numeric


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients of ``f`` at ``x``."""
    x = Tensor(np.array(x.data, dtype=np.float64), requires_grad=True)
    analytic = backward(f(x), [x])[x]
    return _relative_error(analytic, _central_differences(lambda: f(x), x, h))


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """:func:`grad_check` for a closure over several parameter tensors; returns the worst error."""
    grads = backward(loss_fn(), params)
    return max((_relative_error(grads[p], _central_differences(loss_fn, p, h)) for p in params), default=0.0)


# --- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: dict[Tensor, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update of ``params`` in place; params absent from ``grads`` are skipped."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        g = grads.get(p)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"adam: gradient shape {g.shape} != parameter shape {p.shape}")
        key = id(p)
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
