"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Every model computation in this package runs through :class:`Tensor` and the
primitive ops below. Each op records a backward rule on the output tensor
when gradients are needed; :func:`backward` replays the recorded operations
in reverse topological order and accumulates gradients into the
``requires_grad`` leaves. Everything is 64-bit so that central finite
differences (:func:`grad_check`) are a decisive correctness oracle.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit


class ShapeError(ValueError):
    """Incompatible operand shapes for a primitive op."""

    def __init__(self, op: str, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}")


class DomainError(ValueError):
    """Input outside the mathematical domain of a primitive op."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable recording of backward rules inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class _Record:
    """One recorded operation: inputs, op name, and its local backward rule."""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """Dense n-dimensional float64 value with optional gradient tracking.

    ``grad`` is populated on ``requires_grad`` leaves by :func:`backward`
    and accumulates additively across calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_record")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: _Record | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; resolved through module globals so tests may monkeypatch
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return tslice(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(inputs: Sequence[Tensor]) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in inputs)


def _make(op: str, data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _needs_grad(inputs):
        out.requires_grad = True
        out._record = _Record(op, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` by summing over broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics; operands must be >= 2-D."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make("matmul", a.data @ b.data, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# shape manipulation

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat requires at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for i in range(len(tensors)):
            idx[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return _make("concat", data, tensors, backward_fn)


def tslice(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing; backward scatters the gradient."""
    data = a.data[key]

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _make("slice", data, (a,), backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make("reshape", a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,),
                 lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------------------
# reductions

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", data, (a,), backward_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis] if isinstance(axis, int) else int(np.prod([a.shape[i] for i in axis]))
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return _make("mean", data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: Tensor) -> Tensor:
    return _make("relu", np.maximum(a.data, 0.0), (a,),
                 lambda g: (g * (a.data > 0.0),))


_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
    return _make("gelu", x * cdf, (a,),
                 lambda g: (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make("exp", data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: input must be non-negative")
    data = np.sqrt(a.data)
    return _make("sqrt", data, (a,), lambda g: (g * 0.5 / data,))


def sigmoid(a: Tensor) -> Tensor:
    data = expit(a.data)
    return _make("sigmoid", data, (a,), lambda g: (g * data * (1.0 - data),))


def softplus(a: Tensor) -> Tensor:
    return _make("softplus", np.logaddexp(0.0, a.data), (a,),
                 lambda g: (g * expit(a.data),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make("softmax", s, (a,), backward_fn)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine)."""
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def backward_fn(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        return ((g - gm - y * gym) * inv,)

    return _make("layer-norm", y, (a,), backward_fn)


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm along the last axis. Gradient at the origin is zero."""
    sq = (a.data * a.data).sum(axis=-1)
    n = np.sqrt(sq)

    def backward_fn(g):
        safe = np.where(n == 0.0, 1.0, n)
        return (g[..., None] * a.data / safe[..., None] * (n != 0.0)[..., None],)

    return _make("l2-norm", n, (a,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass

class ComputationTape:
    """Topologically ordered list of the recorded ops reachable from an output."""

    def __init__(self, records: list, tensors: list):
        self.records = records
        self.tensors = tensors  # output tensor of each record, same order

    @classmethod
    def from_output(cls, out: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if t._record is None or id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t._record.inputs:
                stack.append((parent, False))
        return cls([t._record for t in order], order)

    def __len__(self) -> int:
        return len(self.records)


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(leaf) into every ``requires_grad`` leaf's ``grad``.

    Repeated calls without :meth:`Tensor.zero_grad` accumulate additively.
    """
    if out.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {out.shape}")
    if out._record is None and not out.requires_grad:
        raise RuntimeError("backward on a tensor detached from any computation tape")

    tape = ComputationTape.from_output(out)
    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}

    def sink(t: Tensor, g: np.ndarray) -> None:
        if t._record is None:
            if t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
        else:
            acc = grads.get(id(t))
            grads[id(t)] = g if acc is None else acc + g

    if out._record is None:
        sink(out, grads.pop(id(out)))
        return

    for t in reversed(tape.tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        in_grads = t._record.backward_fn(g)
        for parent, pg in zip(t._record.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            sink(parent, pg)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               skip: np.ndarray | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be deterministic and scalar-valued. ``skip`` optionally masks
    out coordinates (e.g. those adjacent to relu kinks) where central
    differences are invalid. Error is |analytic - numeric| scaled by
    max(1, |analytic|, |numeric|) per coordinate.
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    leaf = Tensor(np.array(x.data, copy=True), requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("grad_check requires f to return a scalar tensor")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    flat = leaf.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(leaf).item()
            flat[i] = orig - eps
            lo = f(leaf).item()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(leaf.data.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    if skip is not None:
        rel = np.where(skip, 0.0, rel)
    return float(rel.max())
