"""Layer primitives: affine, batch normalization, activations, MLP stacks.

A tiny module system keeps named parameters/buffers discoverable for the
optimizer and the checkpoint writer. Initialization is Glorot-uniform for
weights, zeros for biases, (gamma, beta) = (1, 0) for batch norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, default_dtype

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.2
PROB_CLAMP = 1e-12


class Module:
    """Base class exposing named parameters and buffers of a module tree."""

    def _components(self):
        for name, value in vars(self).items():
            if isinstance(value, (Module, Tensor)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        out = {}
        for name, value in self._components():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[full] = value
            else:
                out.update(value.named_parameters(f"{full}/"))
        return out

    def named_buffers(self, prefix: str = ""):
        out = {}
        for name, value in self._components():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if not value.requires_grad:
                    out[full] = value
            else:
                out.update(value.named_buffers(f"{full}/"))
        return out

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(default_dtype())


class Affine(Module):
    """Fully connected layer y = x W + b on [rows, features] input."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(glorot_uniform(rng, in_dim, out_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=default_dtype()), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.in_dim:
            raise ValueError(
                f"affine expects [N,{self.in_dim}] input, got {x.data.shape}")
        return x.matmul(self.weight) + self.bias


class BatchNorm(Module):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes with batch statistics (batch of at least 2 rows)
    and updates the running mean/variance with momentum; "train-frozen"
    normalizes the same way but leaves the running statistics untouched;
    eval mode uses the running statistics only.
    """

    def __init__(self, channels: int, eps: float = BN_EPS,
                 momentum: float = BN_MOMENTUM):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=default_dtype()), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=default_dtype()), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, dtype=default_dtype()))
        self.running_var = Tensor(np.ones(channels, dtype=default_dtype()))

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.channels:
            raise ValueError(
                f"batchnorm expects [N,{self.channels}] input, got {x.data.shape}")
        if mode in ("train", "train-frozen"):
            if x.data.shape[0] < 2:
                raise ValueError("train-mode batch norm needs a batch of >= 2")
            out, mu, var = _batchnorm_train(x, self.gamma, self.beta, self.eps)
            if mode == "train":
                m = self.momentum
                self.running_mean.data = \
                    (1 - m) * self.running_mean.data + m * mu
                self.running_var.data = \
                    (1 - m) * self.running_var.data + m * var
            return out
        if mode == "eval":
            inv_std = 1.0 / np.sqrt(self.running_var.data + self.eps)
            scale = self.gamma * inv_std
            return scale * (x - self.running_mean.data) + self.beta
        raise ValueError(f"unknown mode {mode!r}")


def _batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Fused train-mode batch norm with the closed-form backward pass."""
    from .tensor import _node

    n = x.data.shape[0]
    mu = x.data.mean(axis=0)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out = gamma.data * x_hat + beta.data

    def bwd(g):
        g_sum = g.sum(axis=0)
        gx_hat_sum = (g * x_hat).sum(axis=0)
        dx = (gamma.data * inv_std / n) * (n * g - g_sum - x_hat * gx_hat_sum)
        return dx, gx_hat_sum, g_sum

    return _node(out, (x, gamma, beta), bwd), mu, var


def activation(kind: str, x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """Apply one of the supported activations; softmax acts on the last axis."""
    if kind == "relu":
        return x.relu()
    if kind == "leaky_relu":
        return x.leaky_relu(slope)
    if kind == "softmax":
        return x.softmax(axis=-1)
    if kind in (None, "linear"):
        return x
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class MlpSpec:
    """Width schedule for a shared per-point MLP (a stack of 1x1 conv layers)."""

    widths: list
    activation: str = "relu"
    batch_norm: bool = True
    final_plain: bool = False  # last layer without norm/activation

    def __post_init__(self):
        if not self.widths:
            raise ValueError("MlpSpec needs at least one layer width")
        if any(w <= 0 for w in self.widths):
            raise ValueError("layer widths must be positive")


class Mlp(Module):
    """Shared MLP applied row-wise: affine -> batch norm -> activation per layer."""

    def __init__(self, rng: np.random.Generator, in_dim: int, spec: MlpSpec):
        self.spec = spec
        self.layers = []
        self.norms = []
        prev = in_dim
        for w in spec.widths:
            self.layers.append(Affine(rng, prev, w))
            self.norms.append(BatchNorm(w) if spec.batch_norm else None)
            prev = w
        self.out_dim = prev

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i == last and self.spec.final_plain:
                break
            norm = self.norms[i]
            if norm is not None:
                x = norm(x, mode)
            x = activation(self.spec.activation, x)
        return x


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the given class per row.

    Rows of ``probs`` must already be normalized (e.g. softmax output);
    probabilities are clamped to [1e-12, 1] before the log.
    """
    from .tensor import select_classes

    labels = np.asarray(labels, dtype=np.int64)
    row_sums = probs.data.sum(axis=-1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError("cross_entropy expects normalized probability rows")
    picked = select_classes(probs, labels)
    return -(picked.clip(PROB_CLAMP, 1.0).log()).mean()
