"""Dense tensors with reverse-mode automatic differentiation.

Storage is a numpy ndarray (float32 by default, float64 when the caller
hands in 64-bit data -- the "reference mode" used by the gradient-check
oracles). Every operation records its parents and a vector-Jacobian
callback; ``Tensor.backward`` walks the recorded graph once per call and
accumulates into ``.grad`` of every ``requires_grad`` tensor, so repeated
calls without ``zero_grad`` add up.

Determinism: all forward math is plain numpy on a fixed machine, and the
contraction in ``matmul`` is delegated to numpy's ``@`` (BLAS). Results are
bit-stable across runs on the same machine; against a naive triple-loop
oracle they agree to 1e-5 relative (summation order may differ).
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

_FINITE_CHECKS = False
_GRAD_ENABLED = True


def set_finite_checks(enabled: bool) -> None:
    """Globally toggle NaN/Inf detection on tensor creation and op outputs."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _check_finite(arr: np.ndarray, what: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise ContractError(f"non-finite values in {what}")


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data
    return np.asarray(data, dtype=DEFAULT_DTYPE)


ArrayLike = Union["Tensor", np.ndarray, float, int, list, tuple]


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        _check_finite(self.data, "tensor data")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], tuple]] = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad tensor.

        ``self`` must be a scalar. Each call performs one full reverse pass
        with pass-local buffers, so calling twice doubles leaf gradients.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        flows: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.data)
        }
        for node in reversed(topo):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flows.get(id(parent))
                flows[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def astensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data: np.ndarray, parents: Sequence[Tensor],
          vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor(out_data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise / structural ops ---------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = astensor(a), astensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from e

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def neg(a: ArrayLike) -> Tensor:
    a = astensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = astensor(a), astensor(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from e
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _make(out, (a, b), vjp)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product with numpy batching semantics; both inputs >= 2-D."""
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions disagree for {a.shape} x {b.shape}"
        )
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def relu(a: ArrayLike) -> Tensor:
    a = astensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0), (a,), lambda g: (g * mask,))


def tsum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=False).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(np.asarray(out), (a,), vjp)


def tmean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=a.dtype)
    shape = a.shape
    n = a.size if axis is None else np.prod(
        [shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    inv = np.asarray(1.0 / n, dtype=a.dtype)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g * inv, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg * inv, shape).copy(),)

    return _make(np.asarray(out), (a,), vjp)


def reshape(a: ArrayLike, shape: tuple[int, ...]) -> Tensor:
    a = astensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: ArrayLike, axes=None) -> Tensor:
    a = astensor(a)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv) if inv is not None else g.transpose(),)

    return _make(a.data.transpose(axes), (a,), vjp)


def getitem(a: ArrayLike, idx) -> Tensor:
    a = astensor(a)
    out = a.data[idx]
    shape, dtype = a.shape, a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), vjp)


# -- fused numerical ops ---------------------------------------------------


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction form)."""
    a = astensor(a)
    if a.shape == () or a.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis {axis} for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), vjp)


def layer_norm(x: ArrayLike, gamma: ArrayLike, beta: ArrayLike,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} must be ({d},)"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True, dtype=x.dtype)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True, dtype=x.dtype)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def vjp(g):
        axes_lead = tuple(range(g.ndim - 1))
        dbeta = g.sum(axis=axes_lead)
        dgamma = (g * xhat).sum(axis=axes_lead)
        gh = g * gd
        m1 = gh.mean(axis=-1, keepdims=True)
        m2 = (gh * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (gh - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), vjp)


def cross_entropy(logits: ArrayLike, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    ``labels`` is an integer array of shape [B]; gradient w.r.t. logits is
    (softmax - one_hot) / B.
    """
    logits = astensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, C] logits, got {logits.shape}")
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(
            f"cross_entropy: labels shape {labels.shape} does not match batch {b}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(
            f"cross_entropy: label out of range [0, {c}): "
            f"min={labels.min()}, max={labels.max()}"
        )
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(denom)
    loss = np.asarray(-logp[np.arange(b), labels].mean(dtype=z.dtype))
    probs = e / denom

    def vjp(g):
        grad = probs.copy()
        grad[np.arange(b), labels] -= 1.0
        grad *= np.asarray(g / b, dtype=z.dtype)
        return (grad,)

    return _make(loss, (logits,), vjp)


# -- parameter helpers -------------------------------------------------------


def zeros(shape, requires_grad: bool = False, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 requires_grad: bool = True, dtype=DEFAULT_DTYPE) -> Tensor:
    """Uniform in +-sqrt(1/fan_in), the init used for all linear layers."""
    bound = float(np.sqrt(1.0 / fan_in))
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)
