"""Reverse-mode autodiff on 64-bit numpy arrays.

A :class:`Tensor` wraps a float64 ndarray plus an optional gradient slot and
records enough of the computation graph to backpropagate a scalar loss.
Non-finite values are rejected at construction time, so any NaN/Inf produced
by an operation surfaces immediately as a :class:`NonFiniteError`.

The gradient contract for the whole package is :func:`grad_check`: analytic
gradients must agree with central finite differences coordinate by
coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf values."""


class ShapeError(ValueError):
    """Raised on incompatible operand shapes."""


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains non-finite values")
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _stable_sigmoid(arr):
    pos = 1.0 / (1.0 + np.exp(-np.abs(arr)))
    return np.where(arr >= 0, pos, 1.0 - pos)


class Tensor:
    """Dense float64 array with shape metadata and a gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _node(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = _as_array(data)
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- backward pass ---------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._node(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._node(-self.data, (self,), backward)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._node(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._node(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.shape)
                )

        return Tensor._node(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._node(self.data**exponent, (self,), backward)

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError("matmul operands must be at least 2-D")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner dimensions differ: {self.shape} @ {other.shape}"
            )

        def backward(g):
            if self.requires_grad:
                self._accumulate(
                    _unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape)
                )
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape)
                )

        return Tensor._node(self.data @ other.data, (self, other), backward)

    # -- reductions / shaping ----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accumulate(np.broadcast_to(gg, self.shape).copy())

        return Tensor._node(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis, keepdims=False):
        """Maximum along one axis; ties share the gradient equally."""
        max_kept = self.data.max(axis=axis, keepdims=True)

        def backward(g):
            mask = (self.data == max_kept).astype(np.float64)
            mask /= mask.sum(axis=axis, keepdims=True)
            gg = g if keepdims else np.expand_dims(g, axis)
            self._accumulate(mask * gg)

        out = max_kept if keepdims else np.squeeze(max_kept, axis=axis)
        return Tensor._node(out, (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def backward(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor._node(self.data.reshape(shape), (self,), backward)

    def transpose(self, axes):
        inverse = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._node(self.data.transpose(axes), (self,), backward)

    def __getitem__(self, key):
        def backward(g):
            out = np.zeros_like(self.data)
            np.add.at(out, key, g)
            self._accumulate(out)

        return Tensor._node(self.data[key], (self,), backward)

    # -- elementwise nonlinearities ------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._node(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._node(np.log(self.data), (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accumulate(g * 0.5 / out_data)

        return Tensor._node(out_data, (self,), backward)

    def sigmoid(self):
        out_data = _stable_sigmoid(self.data)

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._node(out_data, (self,), backward)

    def softplus(self):
        def backward(g):
            self._accumulate(g * _stable_sigmoid(self.data))

        return Tensor._node(np.logaddexp(0.0, self.data), (self,), backward)


def silu(x: Tensor) -> Tensor:
    """SiLU activation, ``x * sigmoid(x)``."""
    return x * x.sigmoid()


def maximum(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    a_wins = a.data >= b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * a_wins, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~a_wins, b.shape))

    return Tensor._node(np.maximum(a.data, b.data), (a, b), backward)


def minimum(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    a_wins = a.data <= b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * a_wins, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~a_wins, b.shape))

    return Tensor._node(np.minimum(a.data, b.data), (a, b), backward)


def concat(tensors, axis=-1):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return Tensor._node(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def stack(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(part)

    return Tensor._node(
        np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def segment_sum(values: Tensor, segment_ids, num_segments) -> Tensor:
    """Sum rows of ``values`` into ``num_segments`` buckets along axis 0."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + values.shape[1:])
    np.add.at(out, segment_ids, values.data)

    def backward(g):
        values._accumulate(g[segment_ids])

    return Tensor._node(out, (values,), backward)


def softmax(x: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    shifted = x - shift
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def vector_norm(x: Tensor, axis=-1, keepdims=False, eps=1e-24) -> Tensor:
    """Euclidean norm along ``axis``; ``eps`` keeps the gradient finite at 0."""
    return ((x * x).sum(axis=axis, keepdims=keepdims) + Tensor(eps)).sqrt()


def unit_normalize(x: Tensor, axis=-1, eps=1e-24) -> Tensor:
    return x / vector_norm(x, axis=axis, keepdims=True, eps=eps)


# -- gradient checking ------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    worst_index: int


@dataclass
class GradCheckReport:
    """Analytic-vs-central-difference comparison for a set of parameters."""

    max_rel_error: float
    worst_param: str
    entries: list[GradCheckEntry] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tol

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (
            f"grad_check {status}: max rel error {self.max_rel_error:.3e} "
            f"(worst: {self.worst_param}, tol {self.tol:.1e})"
        )


def grad_check(fn, params, eps=1e-5, tol=1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must be a zero-argument callable returning a scalar Tensor built
    from the parameters in ``params`` (a name -> Tensor mapping); it is
    re-evaluated twice per parameter coordinate.

    The per-coordinate relative error divides by ``|analytic| + |numeric|``
    floored at ``1e-6 * max(1, |loss|)``: central differences of a loss of
    magnitude ``L`` carry roundoff noise of order ``1e-11 * L``, so
    coordinates whose true gradient is exactly zero (for example a key
    bias, which softmax shift-invariance cancels) would otherwise compare
    two pure-noise estimates.
    """
    for p in params.values():
        p.zero_grad()
    loss = fn()
    if loss.size != 1:
        raise ShapeError("grad_check requires a scalar-valued function")
    if not np.isfinite(loss.data):
        raise NonFiniteError("grad_check aborted: loss is non-finite")
    denom_floor = 1e-6 * max(1.0, abs(loss.item()))
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    entries = []
    for name, p in params.items():
        ana = analytic[name].reshape(-1)
        worst = 0.0
        worst_idx = 0
        for idx in range(p.data.size):
            where = np.unravel_index(idx, p.data.shape)
            orig = p.data[where]
            p.data[where] = orig + eps
            hi = fn().item()
            p.data[where] = orig - eps
            lo = fn().item()
            p.data[where] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(ana[idx]) + abs(numeric), denom_floor)
            rel = abs(ana[idx] - numeric) / denom
            if rel > worst:
                worst = rel
                worst_idx = idx
        entries.append(GradCheckEntry(name, worst, worst_idx))

    for p in params.values():
        p.zero_grad()
    worst_entry = max(entries, key=lambda e: e.max_rel_error, default=None)
    if worst_entry is None:
        return GradCheckReport(0.0, "<no params>", [], tol)
    return GradCheckReport(worst_entry.max_rel_error, worst_entry.name, entries, tol)
