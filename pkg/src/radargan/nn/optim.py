"""Adam optimizer with the bias-corrected moment updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter moments plus the shared step counter."""

    beta1: float = 0.5
    beta2: float = 0.99
    alpha: float = 2e-4
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One Adam update, in place on the parameter arrays.

    ``params`` maps names to numpy arrays (or Tensors), ``grads`` maps the
    same names to gradient arrays. Parameters without a gradient entry are
    left untouched and their moments are not advanced.
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        arr = p.data if isinstance(p, Tensor) else p
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(arr)
            state.m[name] = m
            state.v[name] = np.zeros_like(arr)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        arr -= (state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)).astype(arr.dtype)


class Adam:
    """Optimizer bound to a fixed set of named parameter tensors."""

    def __init__(self, params: dict, alpha: float = 2e-4,
                 beta1: float = 0.5, beta2: float = 0.99, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(beta1=beta1, beta2=beta2, alpha=alpha, eps=eps)

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items()
                 if p.grad is not None}
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
