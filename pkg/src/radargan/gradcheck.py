"""Finite-difference validation of the reverse-mode gradients.

Runs in 64-bit mode: analytic gradients of the discriminator loss and of the
full generator-to-discriminator composite are compared against central
differences (h = 1e-5) on randomly sampled parameter components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .model import (
    REAL,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    SaLayerSpec,
)
from .nn import Tensor, cross_entropy, using_dtype

FD_STEP = 1e-5
REL_FLOOR = 1e-3  # denominator floor; below this scale errors read as absolute


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _check_params(build_loss: Callable[[], Tensor], params: Dict[str, Tensor],
                  rng: np.random.Generator, n_components: int = 24,
                  corrupt: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients."""
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for name, p in params.items()}
    if corrupt:
        first = next(iter(grads))
        grads[first] = grads[first] + 1.0

    flat = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    picks = rng.choice(len(flat), size=min(n_components, len(flat)),
                       replace=False)
    worst = 0.0
    for pick in picks:
        name, i = flat[pick]
        p = params[name]
        backup = p.data.flat[i]
        p.data.flat[i] = backup + FD_STEP
        up = build_loss().item()
        p.data.flat[i] = backup - FD_STEP
        down = build_loss().item()
        p.data.flat[i] = backup
        fd = (up - down) / (2 * FD_STEP)
        analytic = grads[name].flat[i]
        scale = max(abs(fd), abs(analytic), REL_FLOOR)
        worst = max(worst, abs(fd - analytic) / scale)
    return worst


def _small_disc_config() -> DiscriminatorConfig:
    return DiscriminatorConfig(layers=(
        SaLayerSpec(8, (3.0, 8.0), (4, 8), ((8, 12), (8, 12))),
        SaLayerSpec(3, (8.0, 20.0), (4, 6), ((16, 16), (16, 16))),
        SaLayerSpec(1, (1e9,), (4,), ((24, 24),)),
    ), head_widths=(16, 2))


def discriminator_gradcheck(seed: int, corrupt: bool = False,
                            n_components: int = 24) -> GradCheckResult:
    """Discriminator loss on a batch of two 32-point scenes, train mode."""
    with using_dtype(np.float64):
        rng = np.random.default_rng(seed)
        disc = Discriminator(rng, _small_disc_config())
        coords = np.column_stack([
            rng.uniform(0, 100, size=64), rng.uniform(-50, 50, size=64),
        ]).reshape(2, 32, 2)
        labels = np.array([REAL, 1 - REAL])

        def build_loss():
            return cross_entropy(disc(Tensor(coords), mode="train"), labels)

        err = _check_params(build_loss, disc.named_parameters(), rng,
                            n_components, corrupt)
    return GradCheckResult("discriminator", err, 1e-4)


def composite_gradcheck(seed: int, corrupt: bool = False,
                        n_components: int = 24) -> GradCheckResult:
    """Generator (schedule [4, 8, 16]) through the discriminator to the loss.

    Only the noise-adjacent generator parameters (seed affine and first FP
    layer) are compared; deeper selection boundaries make h=1e-5 differences
    noisier, hence the looser 1e-3 tolerance.
    """
    with using_dtype(np.float64):
        rng = np.random.default_rng(seed)
        gen_cfg = GeneratorConfig(
            noise_dim=8, point_schedule=(4, 8, 16),
            mlp_widths=((12, 12), (12, 12)), seed_feature_dim=8,
            interpolation_k=2, x_max=100.0, y_halfwidth=50.0)
        disc_cfg = DiscriminatorConfig(layers=(
            SaLayerSpec(6, (5.0, 15.0), (4, 6), ((8, 8), (8, 8))),
            SaLayerSpec(2, (20.0, 60.0), (4, 6), ((12, 12), (12, 12))),
        ), head_widths=(12, 2))
        gen = Generator(rng, gen_cfg)
        disc = Discriminator(rng, disc_cfg)
        z = Tensor(rng.standard_normal((2, gen_cfg.noise_dim)))
        labels = np.full(2, REAL)

        def build_loss():
            fake = gen(z, mode="train")
            return cross_entropy(disc(fake, mode="train"), labels)

        params = {name: p for name, p in gen.named_parameters().items()
                  if name.startswith(("seed/", "fp_layers.0/"))}
        err = _check_params(build_loss, params, rng, n_components, corrupt)
    return GradCheckResult("composite", err, 1e-3)


def run_gradcheck_suite(seeds, corrupt: bool = False) -> List[GradCheckResult]:
    results = []
    for seed in seeds:
        results.append(discriminator_gradcheck(seed, corrupt))
        results.append(composite_gradcheck(seed, corrupt))
    return results
