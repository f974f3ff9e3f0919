"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value is a numpy float64 array wrapped in a :class:`Tensor`. Operations
on tensors record their inputs and a backward rule on the output node; calling
``backward()`` on a scalar builds the tape (a topological ordering of the
recorded graph), then walks it once in reverse, accumulating gradients into
``.grad`` buffers.

The op set is deliberately small: matmul, add/sub/mul (with numpy-style
broadcasting), scalar arithmetic, exp, log, sqrt, relu, sigmoid, softmax,
reductions (sum/mean/max), transpose/reshape/concat/indexing. Everything else
(gelu, layer_norm, norms, losses) is composed from these, so a correct
primitive backward rule propagates correctness upward for free.

Numerical guards: ``log`` clamps its argument at 1e-8, ``sqrt`` floors the
denominator of its backward rule, and ``softmax`` subtracts the row max, so no
forward op produces NaN/Inf from finite inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError, StateError

LOG_CLAMP = 1e-8
LAYERNORM_EPS = 1e-5
_SQRT_GRAD_FLOOR = 1e-12


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus optional participation in the gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    # -- construction -------------------------------------------------------

    @staticmethod
    def zeros(*shape: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad)

    @staticmethod
    def ones(*shape: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape), requires_grad)

    @staticmethod
    def randn(rng: np.random.Generator, *shape: int, scale: float = 1.0,
              requires_grad: bool = False) -> "Tensor":
        return Tensor(rng.standard_normal(shape) * scale, requires_grad)

    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"],
              grad_fn: Callable[[np.ndarray], None]) -> "Tensor":
        """Record an op output. The node requires grad iff any parent does."""
        out = Tensor(data)
        grad_parents = tuple(p for p in parents if p.requires_grad)
        if grad_parents:
            out.requires_grad = True
            out._parents = grad_parents
            out._grad_fn = grad_fn
        return out

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"expected a scalar tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- gradient bookkeeping -------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar to all requires_grad leaves."""
        if self.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise StateError("backward was already run on this tape")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any requires_grad tensor")
        tape = build_tape(self)
        self._consumed = True
        self.grad = np.ones_like(self.data)
        for node in reversed(tape):
            if node._grad_fn is not None:
                node._grad_fn(node.grad)

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data

        def grad_fn(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._node(out_data, (self, other), grad_fn)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data - other.data

        def grad_fn(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._node(out_data, (self, other), grad_fn)

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data * other.data

        def grad_fn(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._node(out_data, (self, other), grad_fn)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        def grad_fn(g):
            self._accumulate(-g)

        return Tensor._node(-self.data, (self,), grad_fn)

    def __truediv__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise ContractError("tensor/tensor division is not in the op set; "
                                "compose via exp/log or multiply by a reciprocal")
        return self * (1.0 / float(scalar))

    def __pow__(self, p) -> "Tensor":
        p = float(p)
        out_data = self.data ** p

        def grad_fn(g):
            self._accumulate(g * p * self.data ** (p - 1.0))

        return Tensor._node(out_data, (self,), grad_fn)

    # -- matmul ---------------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = self._coerce(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(
                f"matmul needs ndim >= 2 operands, got {self.shape} @ {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner dimensions disagree: {self.shape} @ {other.shape}")
        out_data = self.data @ other.data

        def grad_fn(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor._node(out_data, (self, other), grad_fn)

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def grad_fn(g):
            self._accumulate(g * out_data)

        return Tensor._node(out_data, (self,), grad_fn)

    def log(self) -> "Tensor":
        clamped = np.maximum(self.data, LOG_CLAMP)
        out_data = np.log(clamped)
        active = self.data > LOG_CLAMP

        def grad_fn(g):
            self._accumulate(g * active / clamped)

        return Tensor._node(out_data, (self,), grad_fn)

    def sqrt(self) -> "Tensor":
        if np.any(self.data < 0):
            raise ContractError("sqrt of a negative value")
        out_data = np.sqrt(self.data)

        def grad_fn(g):
            self._accumulate(g * 0.5 / np.maximum(out_data, _SQRT_GRAD_FLOOR))

        return Tensor._node(out_data, (self,), grad_fn)

    def relu(self) -> "Tensor":
        mask = self.data > 0

        def grad_fn(g):
            self._accumulate(g * mask)

        return Tensor._node(self.data * mask, (self,), grad_fn)

    def sigmoid(self) -> "Tensor":
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def grad_fn(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._node(out_data, (self,), grad_fn)

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        src_shape = self.shape

        def grad_fn(g):
            self._accumulate(g.reshape(src_shape))

        return Tensor._node(out_data, (self,), grad_fn)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)

        def grad_fn(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._node(self.data.transpose(axes), (self,), grad_fn)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    def broadcast_to(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = np.broadcast_to(self.data, shape).copy()
        src_shape = self.shape

        def grad_fn(g):
            self._accumulate(_unbroadcast(g, src_shape))

        return Tensor._node(out_data, (self,), grad_fn)

    def __getitem__(self, key) -> "Tensor":
        out_data = self.data[key]
        if np.isscalar(out_data) or out_data.ndim == 0:
            out_data = np.asarray(out_data)

        def grad_fn(g):
            buf = np.zeros_like(self.data)
            np.add.at(buf, key, g)
            self._accumulate(buf)

        return Tensor._node(out_data.copy(), (self,), grad_fn)

    # -- reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        src_shape = self.shape

        def grad_fn(g):
            self._accumulate(_spread(g, src_shape, axis, keepdims))

        return Tensor._node(np.asarray(out_data), (self,), grad_fn)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else _axis_count(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        """Max along one axis; gradient routes to the first argmax per slice."""
        out_data = self.data.max(axis=axis, keepdims=keepdims)
        idx = np.argmax(self.data, axis=axis)
        src_shape = self.shape

        def grad_fn(g):
            buf = np.zeros(src_shape)
            g_full = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(buf, np.expand_dims(idx, axis), g_full, axis=axis)
            self._accumulate(buf)

        return Tensor._node(np.asarray(out_data), (self,), grad_fn)

    def min(self, axis: int, keepdims: bool = False) -> "Tensor":
        return -((-self).max(axis=axis, keepdims=keepdims))


def _axis_count(shape: tuple[int, ...], axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    return int(np.prod([shape[a] for a in axis]))


def _spread(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduced gradient back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


# -- composite ops ----------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._node(out_data, tuple(tensors), grad_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax with max-subtraction for stability."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - dot))

    return Tensor._node(out_data, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean/unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},), "
                         f"got {gamma.shape} and {beta.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = ((var + eps).log() * -0.5).exp()
    return centered * inv_std * gamma + beta


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU, written via the sigmoid identity
    tanh(z) = 2*sigmoid(2z) - 1."""
    c = float(np.sqrt(2.0 / np.pi))
    inner = (x + x * x * x * 0.044715) * (2.0 * c)
    return x * inner.sigmoid()


def squared_norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return (x * x).sum(axis=axis, keepdims=keepdims)


def euclidean_norm(x: Tensor, axis: int = -1, keepdims: bool = False,
                   eps: float = 0.0) -> Tensor:
    """sqrt of the squared norm. The forward value is exact (norm(0) == 0);
    sqrt's guarded backward rule keeps the gradient finite at zero. Pass a
    small ``eps`` to smooth the kink instead."""
    out = squared_norm(x, axis=axis, keepdims=keepdims)
    if eps:
        out = out + eps
    return out.sqrt()


# -- tape -------------------------------------------------------------------------


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of graph nodes reachable from ``root``.

    Every node's parents precede it, and each node appears exactly once, so a
    single reverse sweep visits each recorded operation once.
    """
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# -- gradient checking -------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool

    def __bool__(self) -> bool:
        return self.passed


def grad_check(f: Callable[..., Tensor], xs: Tensor | Iterable[Tensor],
               step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f`` against central differences.

    Each input is cloned into a fresh requires_grad leaf; the relative error
    per element is |analytic - numeric| / max(|analytic| + |numeric|, 1e-4).
    The denominator floor sits above the float64 central-difference noise
    floor (~1e-11 absolute at step 1e-5), so exact-zero gradients register as
    zero error instead of amplified noise.
    """
    inputs = [xs] if isinstance(xs, Tensor) else list(xs)
    leaves = [Tensor(x.data.copy(), requires_grad=True) for x in inputs]
    out = f(*leaves)
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got {out.shape}")
    out.backward()
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy()
                for l in leaves]

    max_rel = 0.0
    for i, leaf in enumerate(leaves):
        flat = leaf.data.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = f(*leaves).item()
            flat[j] = orig - step
            lo = f(*leaves).item()
            flat[j] = orig
            num[j] = (hi - lo) / (2.0 * step)
        ana = analytic[i].reshape(-1)
        denom = np.maximum(np.abs(ana) + np.abs(num), 1e-4)
        rel = np.abs(ana - num) / denom
        if rel.size:
            max_rel = max(max_rel, float(rel.max()))
    return GradCheckReport(max_rel_err=max_rel, passed=max_rel < tol)
