"""Layers, parameter containers, and the SGD optimizer.

Weights initialize uniformly in ``±sqrt(1/in_dim)`` from a caller-supplied
``numpy.random.Generator`` so every model in the package is reproducible
from a single seed.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeError, concat, silu, softmax


class ConfigurationError(ValueError):
    """Raised for structurally invalid layer configurations."""


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.ascontiguousarray(data, dtype=np.float64), requires_grad=True)


def uniform_init(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class providing recursive parameter discovery by attribute name."""

    def parameters(self) -> dict[str, Parameter]:
        found: dict[str, Parameter] = {}
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                found[name] = value
            elif isinstance(value, Module):
                for sub, p in value.parameters().items():
                    found[f"{name}.{sub}"] = p
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, p in item.parameters().items():
                            found[f"{name}.{i}.{sub}"] = p
                    elif isinstance(item, Parameter):
                        found[f"{name}.{i}"] = p
        return found

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def load_state(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing}, unexpected={extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {arr.shape} != {p.data.shape}"
                )
            p.data[...] = arr

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}


class Linear(Module):
    """Affine map on the last axis; leading axes are preserved."""

    def __init__(self, in_dim, out_dim, rng, bias=True):
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigurationError("linear dimensions must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(uniform_init(rng, (in_dim, out_dim), in_dim))
        self.bias = Parameter(uniform_init(rng, (out_dim,), in_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"linear expects last axis {self.in_dim}, got {x.shape}"
            )
        squeeze = x.ndim == 1
        if squeeze:
            x = x.reshape(1, -1)
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out.reshape(-1) if squeeze else out


class Mlp(Module):
    """Two-layer perceptron with SiLU between the layers."""

    def __init__(self, in_dim, hidden_dim, out_dim, rng):
        self.fc1 = Linear(in_dim, hidden_dim, rng)
        self.fc2 = Linear(hidden_dim, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(silu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with packed per-head projections.

    Queries/keys may carry a different feature width than values (the second
    fusion stage concatenates context onto its queries and keys), so the
    projection widths are configured independently.  ``out_dim`` must be
    divisible by ``heads``; each head works in ``out_dim / heads`` dimensions
    and the concatenated heads pass through a final square output projection.
    """

    def __init__(self, query_dim, key_dim, value_dim, out_dim, heads, rng):
        if out_dim % heads != 0:
            raise ConfigurationError(
                f"attention width {out_dim} not divisible by {heads} heads"
            )
        self.heads = heads
        self.head_dim = out_dim // heads
        self.out_dim = out_dim
        self.q_proj = Linear(query_dim, out_dim, rng)
        self.k_proj = Linear(key_dim, out_dim, rng)
        self.v_proj = Linear(value_dim, out_dim, rng)
        self.out_proj = Linear(out_dim, out_dim, rng)

    def _split(self, t: Tensor, batch, length) -> Tensor:
        # [B, L, H*D] -> [B, H, L, D]
        return t.reshape(batch, length, self.heads, self.head_dim).transpose((0, 2, 1, 3))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        if query.ndim != 3 or key.ndim != 3 or value.ndim != 3:
            raise ShapeError("attention operands must be [batch, length, features]")
        if key.shape[1] != value.shape[1]:
            raise ShapeError("key/value lengths differ")
        batch, q_len = query.shape[0], query.shape[1]
        k_len = key.shape[1]
        q = self._split(self.q_proj(query), batch, q_len)
        k = self._split(self.k_proj(key), batch, k_len)
        v = self._split(self.v_proj(value), batch, k_len)
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        weights = softmax(scores, axis=-1)
        mixed = weights @ v
        merged = mixed.transpose((0, 2, 1, 3)).reshape(batch, q_len, self.out_dim)
        return self.out_proj(merged)


class CausalConv1d(Module):
    """Dilated causal 1-D convolution over ``[batch, time, channels]``.

    Left zero-padding of ``(kernel - 1) * dilation`` frames makes the output
    at frame ``t`` a function of frames ``t, t - d, ..., t - (K-1) d`` only.
    """

    def __init__(self, in_channels, out_channels, kernel, dilation, rng):
        if kernel < 1 or dilation < 1:
            raise ConfigurationError("kernel and dilation must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.dilation = dilation
        fan_in = kernel * in_channels
        self.weight = Parameter(uniform_init(rng, (kernel, in_channels, out_channels), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.in_channels:
            raise ShapeError(f"conv expects [N, T, {self.in_channels}], got {x.shape}")
        batch, steps, _ = x.shape
        pad = (self.kernel - 1) * self.dilation
        weight = self.weight
        bias = self.bias

        def backward(g):
            if x.requires_grad:
                gx_pad = np.zeros((batch, steps + pad, self.in_channels))
                for k in range(self.kernel):
                    lo = k * self.dilation
                    gx_pad[:, lo : lo + steps] += g @ weight.data[k].T
                x._accumulate(gx_pad[:, pad:])
            if weight.requires_grad:
                gw = np.zeros_like(weight.data)
                for k in range(self.kernel):
                    lo = k * self.dilation
                    xs = x_pad[:, lo : lo + steps]
                    gw[k] = np.einsum("ntc,nto->co", xs, g)
                weight._accumulate(gw)
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 1)))

        x_pad = np.zeros((batch, steps + pad, self.in_channels))
        x_pad[:, pad:] = x.data
        out = np.broadcast_to(bias.data, (batch, steps, self.out_channels)).copy()
        for k in range(self.kernel):
            lo = k * self.dilation
            out += x_pad[:, lo : lo + steps] @ weight.data[k]
        return Tensor._node(out, (x, weight, bias), backward)


class SGD:
    """Stochastic gradient descent with momentum and decoupled L2 decay.

    The momentum buffers persist across :meth:`step` calls and belong to a
    single training loop; the update is ``buf = m*buf + (g + wd*theta)``
    followed by ``theta -= lr * buf``.
    """

    def __init__(self, params: dict[str, Parameter], lr, momentum=0.0, weight_decay=0.0):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buffers = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name} has no gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                buf = self._buffers[name]
                buf *= self.momentum
                buf += g
                g = buf
            p.data -= self.lr * g
