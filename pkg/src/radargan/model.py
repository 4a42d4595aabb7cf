"""Generator and discriminator networks built from point-set primitives.

The generator is a stack of feature-propagation (FP) layers growing a seed
point set (an affine map of the noise vector) to the full scene size. Each
discriminator is a stack of set-abstraction (SA) layers (farthest point
sampling, multi-scale grouping, shared MLP + max pool) followed by a fully
connected head with a two-class softmax.

Forward passes are batched: coordinates are [B, N, 2] tensors, features
[B, N, C]. Discrete choices (sampling, grouping, nearest neighbors) are
computed outside the autodiff graph; the arithmetic on gathered coordinates
and features stays on the tape, so gradients reach generator parameters
through the discriminator's relative-coordinate pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geom import PointSet, farthest_point_sample
from .nn import Affine, Mlp, MlpSpec, Module, Tensor, concat, gather_axis1

REAL, FAKE = 0, 1  # class indices of the discriminator head


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class SaLayerSpec:
    """One set-abstraction layer: FPS count, MSG radii and group widths."""

    centroids: int
    radii: tuple
    samples: tuple
    widths: tuple  # per-radius MLP width schedules

    def __post_init__(self):
        if self.centroids < 1:
            raise ValueError("centroid count must be >= 1")
        if not (len(self.radii) == len(self.samples) == len(self.widths)):
            raise ValueError("radii, samples and widths must align")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly increasing")
        if any(s < 1 for s in self.samples):
            raise ValueError("group sizes must be >= 1")


@dataclass(frozen=True)
class DiscriminatorConfig:
    layers: tuple
    head_widths: tuple = (256, 128, 2)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("at least one SA layer required")
        counts = [l.centroids for l in self.layers]
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ValueError("centroid counts must be strictly decreasing")
        if self.head_widths[-1] != 2:
            raise ValueError("head must end in 2 classes")


@dataclass(frozen=True)
class GeneratorConfig:
    noise_dim: int = 128
    point_schedule: tuple = (16, 64, 256, 512)
    mlp_widths: tuple = ((64, 64), (64, 64), (64, 32))
    seed_feature_dim: int = 32
    interpolation_k: int = 3
    x_max: float = 100.0
    y_halfwidth: float = 50.0

    def __post_init__(self):
        sched = self.point_schedule
        if len(sched) < 2 or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("point schedule must be strictly increasing")
        if sched[-1] > 512:
            raise ValueError("final scene size must be <= 512")
        if len(self.mlp_widths) != len(sched) - 1:
            raise ValueError("one MLP width schedule per FP layer required")
        if self.noise_dim < 1 or self.seed_feature_dim < 1:
            raise ValueError("noise and feature dims must be positive")

    @property
    def n_fp_layers(self) -> int:
        return len(self.point_schedule) - 1


def default_generator_config() -> GeneratorConfig:
    return GeneratorConfig()


def default_discriminator_config() -> DiscriminatorConfig:
    return DiscriminatorConfig(layers=(
        SaLayerSpec(128, (1.0, 2.0, 4.0), (8, 16, 32),
                    ((16, 32), (16, 32), (32, 32))),
        SaLayerSpec(32, (2.0, 4.0, 8.0), (8, 16, 32),
                    ((64, 64), (64, 64), (64, 64))),
        SaLayerSpec(1, (1e9,), (64,), ((128, 256),)),
    ))


def toy_generator_config(d: float = 100.0, w: float = 50.0) -> GeneratorConfig:
    """Desk-scale generator: 128-point scenes, three FP layers."""
    return GeneratorConfig(
        noise_dim=64, point_schedule=(8, 16, 64, 128),
        mlp_widths=((64, 64), (64, 64), (64, 48)),
        seed_feature_dim=32, interpolation_k=3, x_max=d, y_halfwidth=w)


def toy_discriminator_config() -> DiscriminatorConfig:
    """Desk-scale whole-scene discriminator matching the toy generator depth."""
    return DiscriminatorConfig(layers=(
        SaLayerSpec(16, (3.0, 8.0), (6, 12), ((16, 24), (16, 24))),
        SaLayerSpec(4, (8.0, 20.0), (6, 10), ((32, 48), (32, 48))),
        SaLayerSpec(1, (1e9,), (8,), ((64, 96),)),
    ), head_widths=(48, 2))


def toy_segment_discriminator_config() -> DiscriminatorConfig:
    """Smaller discriminator for the sparsely populated scene segments."""
    return DiscriminatorConfig(layers=(
        SaLayerSpec(6, (2.0, 6.0), (4, 8), ((12, 16), (12, 16))),
        SaLayerSpec(2, (6.0, 16.0), (4, 6), ((24, 32), (24, 32))),
        SaLayerSpec(1, (1e9,), (6,), ((48, 48),)),
    ), head_widths=(24, 2))


def single_layer_generator(cfg: GeneratorConfig) -> GeneratorConfig:
    """Ablation 1: collapse the FP stack to a single layer."""
    sched = (cfg.point_schedule[0], cfg.point_schedule[-1])
    return GeneratorConfig(
        noise_dim=cfg.noise_dim, point_schedule=sched,
        mlp_widths=(cfg.mlp_widths[0],),
        seed_feature_dim=cfg.seed_feature_dim,
        interpolation_k=cfg.interpolation_k,
        x_max=cfg.x_max, y_halfwidth=cfg.y_halfwidth)


def single_layer_discriminator(cfg: DiscriminatorConfig) -> DiscriminatorConfig:
    """Ablation 1: per-point MLP plus one global pooling layer."""
    widths = cfg.layers[-1].widths[0]
    return DiscriminatorConfig(
        layers=(SaLayerSpec(1, (1e9,), (512,), (widths,)),),
        head_widths=cfg.head_widths)


# -- batched neighbor selection (outside the autodiff graph) -----------------


def _pairwise_d2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances [B, M, N] between two batched point arrays."""
    diff = a[:, :, None, :] - b[:, None, :, :]
    return np.einsum("bmnc,bmnc->bmn", diff, diff)


def _batched_ball_groups(d2: np.ndarray, radius: float, max_samples: int):
    """Fixed-width in-radius groups per center, ascending index order."""
    b, m, n = d2.shape
    s = min(max_samples, n)
    cols = np.arange(n)
    mask = d2 <= radius * radius
    # keys place in-range columns (still index-ordered) before the rest
    key = np.where(mask, cols, n + cols)
    part = np.argpartition(key, s - 1, axis=-1)[..., :s] if s < n else \
        np.broadcast_to(cols, (b, m, n)).copy()
    sub = np.take_along_axis(key, part, axis=-1)
    order = np.argsort(sub, axis=-1, kind="stable")
    groups = np.take_along_axis(part, order, axis=-1)
    counts = mask.sum(axis=-1)
    empty = counts == 0
    pad = np.arange(s)[None, None, :] >= counts[..., None]
    groups = np.where(pad, groups[..., :1], groups)
    if s < max_samples:
        extra = np.repeat(groups[..., :1], max_samples - s, axis=-1)
        groups = np.concatenate([groups, extra], axis=-1)
    return groups, empty


def _batched_knn(d2: np.ndarray, k: int):
    """k nearest columns per row of a [B, M, N] distance matrix."""
    n = d2.shape[-1]
    if k < n:
        part = np.argpartition(d2, k - 1, axis=-1)[..., :k]
    else:
        part = np.broadcast_to(np.arange(n), d2.shape).copy()
    sub_d2 = np.take_along_axis(d2, part, axis=-1)
    order = np.lexsort((part, sub_d2), axis=-1)
    idx = np.take_along_axis(part, order, axis=-1)
    dist = np.sqrt(np.take_along_axis(sub_d2, order, axis=-1))
    return idx, dist


def _fps_starts(coords: np.ndarray, rng: Optional[np.random.Generator]):
    """Start index per scene: random in training, else lexicographic minimum."""
    b, n = coords.shape[0], coords.shape[1]
    if rng is not None:
        return rng.integers(0, n, size=b)
    starts = np.empty(b, dtype=np.int64)
    for i in range(b):
        starts[i] = np.lexsort((coords[i, :, 1], coords[i, :, 0]))[0]
    return starts


# -- discriminator ------------------------------------------------------------


class SaLayer(Module):
    """Set abstraction: FPS -> multi-scale grouping -> shared MLP -> max pool."""

    def __init__(self, rng: np.random.Generator, in_features: int,
                 spec: SaLayerSpec):
        self.spec = spec
        self.mlps = [Mlp(rng, 2 + in_features,
                         MlpSpec(list(w), activation="leaky_relu"))
                     for w in spec.widths]
        self.out_dim = sum(m.out_dim for m in self.mlps)

    def __call__(self, coords: Tensor, feats: Tensor, mode: str,
                 fps_rng: Optional[np.random.Generator] = None):
        b, n, _ = coords.data.shape
        n_cent = min(self.spec.centroids, n)
        starts = _fps_starts(coords.data, fps_rng)
        cent_idx = np.empty((b, n_cent), dtype=np.int64)
        for i in range(b):
            cent_idx[i] = farthest_point_sample(coords.data[i], n_cent, starts[i])
        new_coords = gather_axis1(coords, cent_idx)
        d2 = _pairwise_d2(new_coords.data, coords.data)
        pooled = []
        for radius, n_sample, mlp in zip(self.spec.radii, self.spec.samples,
                                         self.mlps):
            groups, empty = _batched_ball_groups(d2, radius, n_sample)
            if empty.any():
                # empty groups fall back to the centroid's own point
                groups = np.where(empty[..., None], cent_idx[..., None], groups)
            group_xy = gather_axis1(coords, groups)
            rel = group_xy - new_coords.reshape(b, n_cent, 1, 2)
            group_f = gather_axis1(feats, groups)
            h = concat([rel, group_f], axis=-1)
            s = groups.shape[-1]
            h = h.reshape(b * n_cent * s, 2 + feats.data.shape[-1])
            h = mlp(h, mode)
            h = h.reshape(b, n_cent, s, mlp.out_dim)
            pooled.append(h.max(axis=2))
        return new_coords, concat(pooled, axis=-1)


class Discriminator(Module):
    """SA stack plus fully connected head ending in a two-class softmax."""

    def __init__(self, rng: np.random.Generator, config: DiscriminatorConfig):
        self.config = config
        self.sa_layers = []
        feat_dim = 2  # initial per-point features are the coordinates
        for spec in config.layers:
            layer = SaLayer(rng, feat_dim, spec)
            self.sa_layers.append(layer)
            feat_dim = layer.out_dim
        self.head = Mlp(rng, feat_dim * config.layers[-1].centroids,
                        MlpSpec(list(config.head_widths),
                                activation="leaky_relu", final_plain=True))

    def __call__(self, coords: Tensor, mode: str = "train",
                 fps_rng: Optional[np.random.Generator] = None) -> Tensor:
        b, n = coords.data.shape[0], coords.data.shape[1]
        if n == 0:
            return Tensor(np.tile([0.0, 1.0], (b, 1)))
        feats = coords
        for layer in self.sa_layers:
            coords, feats = layer(coords, feats, mode, fps_rng)
        global_feat = feats.reshape(b, feats.data.shape[1] * feats.data.shape[2])
        return self.head(global_feat, mode).softmax(axis=-1)


def discriminator_forward(scene, disc: Discriminator, mode: str = "eval"):
    """Probability pair (p_real, p_fake) for one scene (eval path, B=1)."""
    xy = scene.xy if isinstance(scene, PointSet) else np.asarray(scene, float)
    if xy.shape[0] == 0:
        return 0.0, 1.0
    probs = disc(Tensor(xy[None, :, :]), mode)
    return float(probs.data[0, REAL]), float(probs.data[0, FAKE])


def classify(scene, disc: Discriminator, threshold: float = 0.5) -> bool:
    """True iff the discriminator scores the scene as real (p_real > threshold)."""
    p_real, _ = discriminator_forward(scene, disc)
    return p_real > threshold


# -- generator ----------------------------------------------------------------


class FpLayer(Module):
    """Feature propagation: replicate parents, interpolate, offset, refeature.

    Children start as round-robin copies of the parent points; their input
    feature is the inverse-distance interpolation over the k nearest parents
    plus the child's coordinates and a replica-rank channel (which breaks the
    symmetry between copies of the same parent). A shared MLP produces the
    child features; a linear head produces a 2-D coordinate offset.
    """

    def __init__(self, rng: np.random.Generator, in_features: int,
                 widths: Sequence[int], k: int):
        self.k = k
        self.mlp = Mlp(rng, 2 + 1 + in_features, MlpSpec(list(widths)))
        self.res_head = Affine(rng, self.mlp.out_dim, 2)
        self.out_dim = self.mlp.out_dim

    def __call__(self, coords: Tensor, feats: Tensor, target: int, mode: str):
        b, n_par, _ = coords.data.shape
        if target < n_par:
            raise ValueError("target count must be >= parent count")
        repl = np.arange(target) % n_par
        idx = np.broadcast_to(repl, (b, target))
        child0 = gather_axis1(coords, idx)

        k = min(self.k, n_par)
        d2 = _pairwise_d2(child0.data, coords.data)
        nn_idx, dist = _batched_knn(d2, k)
        w = 1.0 / (dist + 1e-8)
        w /= w.sum(axis=-1, keepdims=True)
        nb_feats = gather_axis1(feats, nn_idx)
        interp = (nb_feats * w[..., None].astype(nb_feats.data.dtype)).sum(axis=2)

        from .nn import default_dtype
        reps = math.ceil(target / n_par)
        rank = (np.arange(target) // n_par) / max(1, reps - 1)
        rank_t = Tensor(np.broadcast_to(
            rank[None, :, None], (b, target, 1)).astype(default_dtype()))

        h = concat([child0, rank_t, interp], axis=-1)
        h = h.reshape(b * target, h.data.shape[-1])
        h = self.mlp(h, mode)
        offset = self.res_head(h).reshape(b, target, 2)
        return child0 + offset, h.reshape(b, target, self.out_dim)


class Generator(Module):
    """FP stack mapping a noise vector to a fixed-size point-cloud scene."""

    def __init__(self, rng: np.random.Generator, config: GeneratorConfig):
        self.config = config
        n0 = config.point_schedule[0]
        self.seed = Affine(rng, config.noise_dim,
                           n0 * (2 + config.seed_feature_dim))
        self.fp_layers = []
        feat_dim = config.seed_feature_dim
        for widths in config.mlp_widths:
            layer = FpLayer(rng, feat_dim, widths, config.interpolation_k)
            self.fp_layers.append(layer)
            feat_dim = layer.out_dim

    def __call__(self, z: Tensor, mode: str = "train") -> Tensor:
        cfg = self.config
        if z.data.ndim != 2 or z.data.shape[1] != cfg.noise_dim:
            raise ValueError(
                f"noise must be [B,{cfg.noise_dim}], got {z.data.shape}")
        b = z.data.shape[0]
        n0 = cfg.point_schedule[0]
        seed = self.seed(z).reshape(b, n0, 2 + cfg.seed_feature_dim)
        coords = seed.slice_last(0, 2)
        feats = seed.slice_last(2, 2 + cfg.seed_feature_dim)
        for layer, target in zip(self.fp_layers, cfg.point_schedule[1:]):
            coords, feats = layer(coords, feats, target, mode)
        # the network works in a normalized coordinate space; an affine map
        # stretches it over the field of view and a reflective clamp folds
        # stray values back inside. hard and tanh clamps both leave a
        # vanishing gradient past the bounds, which permanently pins any
        # point that overshoots; reflection keeps unit gradient everywhere
        half_x = 0.5 * cfg.x_max
        x = (coords.slice_last(0, 1) * half_x + half_x).reflect(0.0, cfg.x_max)
        y = (coords.slice_last(1, 2) * cfg.y_halfwidth).reflect(
            -cfg.y_halfwidth, cfg.y_halfwidth)
        return concat([x, y], axis=-1)

    def sample_noise(self, rng: np.random.Generator, batch: int) -> Tensor:
        from .nn import default_dtype
        return Tensor(rng.standard_normal(
            (batch, self.config.noise_dim)).astype(default_dtype()))


def generator_forward(z, gen: Generator, mode: str = "eval") -> PointSet:
    """Generate one scene from a single noise vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != gen.config.noise_dim:
        raise ValueError(f"noise vector must have length {gen.config.noise_dim}")
    from .nn import no_grad
    with no_grad():
        coords = gen(Tensor(z[None, :]), mode)
    return PointSet(coords.data[0])


# -- the full GAN bundle -------------------------------------------------------


class GanModel(Module):
    """Generator, whole-scene discriminator and the six segment discriminators."""

    def __init__(self, rng: np.random.Generator, gen_cfg: GeneratorConfig,
                 disc_cfg: DiscriminatorConfig,
                 seg_cfg: Optional[DiscriminatorConfig] = None,
                 one_discriminator: bool = False):
        from .geom import SEGMENT_IDS
        if gen_cfg.n_fp_layers != len(disc_cfg.layers):
            raise ValueError("FP layer count must equal SA layer count")
        self.gen_cfg = gen_cfg
        self.disc_cfg = disc_cfg
        self.seg_cfg = seg_cfg if seg_cfg is not None else disc_cfg
        self.one_discriminator = one_discriminator
        self.generator = Generator(rng, gen_cfg)
        self.disc_whole = Discriminator(rng, disc_cfg)
        self.segment_discs = {} if one_discriminator else {
            str(seg_id): Discriminator(rng, self.seg_cfg)
            for seg_id in SEGMENT_IDS}

    def _components(self):
        yield from super()._components()
        for name, disc in self.segment_discs.items():
            yield f"segment_discs.{name}", disc

    def classify(self, scene, threshold: float = 0.5) -> bool:
        return classify(scene, self.disc_whole, threshold)
