"""Composite GAN objective, alternating training loop, and checkpointing.

The objective is the whole-scene discriminator loss plus a lambda-weighted
sum of per-segment discriminator losses, applied symmetrically in both the
discriminator and generator phases. Segments with no points (on either the
real or the fake side) are skipped for that step.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import SceneRecord, filter_min_detections
from .geom import SEGMENT_IDS, SegmentSpec, mirror_scene, segment_index
from .model import (
    FAKE,
    REAL,
    Discriminator,
    DiscriminatorConfig,
    GanModel,
    GeneratorConfig,
    single_layer_discriminator,
    single_layer_generator,
)
from .nn import Adam, Tensor, cross_entropy, no_grad

CHECKPOINT_MAGIC = b"RGCKPT1\n"


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file cannot be parsed."""


class IncompatibleCheckpointError(ValueError):
    """Raised when a checkpoint was written for a different model config."""


@dataclass
class TrainConfig:
    lam: float = 0.6
    batch_size: int = 64
    beta1: float = 0.5
    beta2: float = 0.99
    alpha: float = 2e-4
    adam_eps: float = 1e-8
    epochs: int = 50
    seed: int = 0
    d: float = 100.0
    w: float = 50.0
    augment: bool = True
    single_layer: bool = False
    one_discriminator: bool = False
    min_detections: int = 0
    checkpoint_every: int = 10  # epochs; 0 disables periodic checkpoints

    def __post_init__(self):
        if not (0.0 <= self.lam < 1.0):
            raise ValueError("segment weight lambda must be in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class StepLosses:
    d_whole: float
    d_segments: float
    g_loss: float


def composite_loss(whole_loss, segment_losses, lam: float):
    """Whole-scene loss plus lambda times the sum of non-skipped segment losses."""
    total = whole_loss
    for seg in segment_losses:
        if seg is not None:
            total = total + lam * seg
    return total


def augment_mirror(scenes: Sequence) -> list:
    """Originals followed by the mirrored copy of each scene."""
    out = list(scenes)
    for scene in scenes:
        if isinstance(scene, SceneRecord):
            out.append(SceneRecord(
                id=scene.id + "-m", sequence=scene.sequence,
                sensor=scene.sensor, points=mirror_scene(scene.points)))
        else:
            out.append(mirror_scene(scene))
    return out


# -- batching helpers ----------------------------------------------------------


def _pad_batch(xys: List[np.ndarray], dtype) -> np.ndarray:
    """Stack variable-length scenes into [B, W, 2] by cycling each scene's points."""
    width = max(a.shape[0] for a in xys)
    out = np.empty((len(xys), width, 2), dtype=dtype)
    for i, a in enumerate(xys):
        idx = np.arange(width) % a.shape[0]
        out[i] = a[idx]
    return out


def _segment_members(xys: List[np.ndarray], spec: SegmentSpec):
    """Per-segment member index lists for every scene in the batch."""
    members = [[] for _ in SEGMENT_IDS]
    for scene_i, xy in enumerate(xys):
        labels, _ = segment_index(xy, spec)
        for seg_i in range(len(SEGMENT_IDS)):
            idx = np.flatnonzero(labels == seg_i)
            if idx.size:
                members[seg_i].append((scene_i, idx))
    return members


def make_optimizers(gan: GanModel, cfg: TrainConfig) -> Dict[str, Adam]:
    def adam(params):
        return Adam(params, alpha=cfg.alpha, beta1=cfg.beta1,
                    beta2=cfg.beta2, eps=cfg.adam_eps)

    opts = {
        "gen": adam(gan.generator.named_parameters("generator/")),
        "whole": adam(gan.disc_whole.named_parameters("disc_whole/")),
    }
    for name, disc in gan.segment_discs.items():
        opts[f"seg/{name}"] = adam(disc.named_parameters(f"seg/{name}/"))
    return opts


def _segment_losses_from_members(disc_map, members, coord_src, labels_per_scene,
                                 rng, dtype, mode="train"):
    """Cross-entropy per segment discriminator over its non-empty sub-batch.

    ``coord_src`` maps a (scene_index, member_indices, width) triple to a
    [width, 2] coordinate slice (plain numpy in the discriminator phase, a
    tape gather in the generator phase).
    """
    losses = []
    for seg_i, seg_id in enumerate(SEGMENT_IDS):
        entries = members[seg_i]
        if len(entries) < 2:  # batch norm needs >= 2 scenes in the head
            losses.append(None)
            continue
        width = max(idx.size for _, idx in entries)
        slices = []
        labels = []
        for scene_i, idx in entries:
            padded = idx[np.arange(width) % idx.size]
            slices.append(coord_src(scene_i, padded))
            labels.append(labels_per_scene[scene_i])
        from .nn import concat
        coords = concat([s.reshape(1, width, 2) for s in slices], axis=0) \
            if isinstance(slices[0], Tensor) else \
            Tensor(np.stack([s for s in slices]).astype(dtype))
        disc = disc_map[str(seg_id)]
        probs = disc(coords, mode=mode, fps_rng=rng)
        losses.append(cross_entropy(probs, np.asarray(labels)))
    return losses


def gan_step(real_batch: List[np.ndarray], gan: GanModel,
             opts: Dict[str, Adam], cfg: TrainConfig,
             rng: np.random.Generator) -> StepLosses:
    """One discriminator update followed by one generator update."""
    if not real_batch:
        raise ValueError("empty batch")
    from .nn import default_dtype
    dtype = default_dtype()
    b = len(real_batch)
    spec = SegmentSpec(cfg.d)
    use_segments = bool(gan.segment_discs) and cfg.lam > 0.0

    # -- discriminator phase ---------------------------------------------
    # real and fake scenes go through the discriminators as separate
    # forward passes: mixing them in one train-mode batch would let batch
    # norm leak real-vs-fake information through the batch statistics, and
    # would normalize the generator phase (an all-fake batch) differently.
    # only the real passes update the batch-norm running statistics, so
    # eval-mode classification normalizes with real-scene statistics even
    # while the generator's output distribution is still far from real
    # the generator always runs with eval-mode batch norm (fixed unit
    # statistics, learnable affine): per-batch statistics would renormalize
    # away the distribution shifts each optimizer step makes, which stalls
    # generator learning completely at the configured step size. this also
    # makes the trained mapping identical to the one used at generation time
    with no_grad():
        z = gan.generator.sample_noise(rng, b)
        fake_coords = gan.generator(z, mode="eval").data
    fake_xys = [fake_coords[i] for i in range(b)]
    real_xys = [np.asarray(a, dtype=np.float64) for a in real_batch]

    p_real = gan.disc_whole(Tensor(_pad_batch(real_xys, dtype)),
                            mode="train", fps_rng=rng)
    p_fake = gan.disc_whole(Tensor(_pad_batch(fake_xys, dtype)),
                            mode="train-frozen", fps_rng=rng)
    d_whole = (cross_entropy(p_real, np.full(b, REAL))
               + cross_entropy(p_fake, np.full(b, FAKE))) * 0.5

    seg_losses = [None] * len(SEGMENT_IDS)
    if use_segments:
        seg_real = _segment_losses_from_members(
            gan.segment_discs, _segment_members(real_xys, spec),
            lambda i, idx: real_xys[i][idx],
            np.full(b, REAL), rng, dtype)
        seg_fake = _segment_losses_from_members(
            gan.segment_discs, _segment_members(fake_xys, spec),
            lambda i, idx: fake_xys[i][idx],
            np.full(b, FAKE), rng, dtype, mode="train-frozen")
        seg_losses = [
            (r + f) * 0.5 if r is not None and f is not None
            else (r if f is None else f)
            for r, f in zip(seg_real, seg_fake)]
    d_total = composite_loss(d_whole, seg_losses, cfg.lam)

    gan.disc_whole.zero_grad()
    for disc in gan.segment_discs.values():
        disc.zero_grad()
    d_total.backward()
    opts["whole"].step()
    if use_segments:
        for seg_i, seg_id in enumerate(SEGMENT_IDS):
            if seg_losses[seg_i] is not None:
                opts[f"seg/{seg_id}"].step()
    d_seg_value = sum(s.item() for s in seg_losses if s is not None)

    # -- generator phase ---------------------------------------------------
    z = gan.generator.sample_noise(rng, b)
    fake = gan.generator(z, mode="eval")
    probs = gan.disc_whole(fake, mode="train-frozen", fps_rng=rng)
    real_labels = np.full(b, REAL)
    g_whole = cross_entropy(probs, real_labels)

    g_seg_losses = [None] * len(SEGMENT_IDS)
    if use_segments:
        members = _segment_members([fake.data[i] for i in range(b)], spec)
        from .nn.tensor import gather_scenes

        def coord_src(scene_i, idx):
            # slice one generated scene's segment through the tape
            return gather_scenes(
                fake, np.array([scene_i]), idx[None, :]).reshape(idx.size, 2)

        g_seg_losses = _segment_losses_from_members(
            gan.segment_discs, members, coord_src, real_labels, rng, dtype,
            mode="train-frozen")
    g_total = composite_loss(g_whole, g_seg_losses, cfg.lam)

    gan.generator.zero_grad()
    g_total.backward()
    opts["gen"].step()

    return StepLosses(d_whole=d_whole.item(), d_segments=d_seg_value,
                      g_loss=g_total.item())


# -- training loop ----------------------------------------------------------------


def train(dataset: Sequence[SceneRecord], cfg: TrainConfig,
          gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
          seg_cfg: Optional[DiscriminatorConfig] = None,
          out_dir: Optional[str] = None):
    """Run the full GAN training loop; returns (model, optimizers, history).

    History is a list of (step, d_loss_whole, d_loss_segments, g_loss) rows.
    Fully reproducible for a fixed seed.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if cfg.min_detections > 0:
        dataset = filter_min_detections(dataset, cfg.min_detections)
        if not dataset:
            raise ValueError("dataset empty after min-detection filtering")
    if cfg.single_layer:
        gen_cfg = single_layer_generator(gen_cfg)
        disc_cfg = single_layer_discriminator(disc_cfg)
        seg_cfg = single_layer_discriminator(seg_cfg) if seg_cfg else None
    if cfg.augment:
        dataset = augment_mirror(dataset)

    rng = np.random.default_rng(cfg.seed)
    gan = GanModel(rng, gen_cfg, disc_cfg, seg_cfg,
                   one_discriminator=cfg.one_discriminator)
    opts = make_optimizers(gan, cfg)
    fingerprint = config_fingerprint(gan)

    xys = [rec.points.xy for rec in dataset]
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(xys))
        for lo in range(0, len(order), cfg.batch_size):
            batch_idx = order[lo:lo + cfg.batch_size]
            if batch_idx.size < 2:
                continue
            batch = [xys[i] for i in batch_idx]
            losses = gan_step(batch, gan, opts, cfg, rng)
            step += 1
            history.append((step, losses.d_whole, losses.d_segments,
                            losses.g_loss))
        if out_dir and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"epoch{epoch + 1:04d}.ckpt"),
                            gan, opts, step, fingerprint)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"),
                        gan, opts, step, fingerprint)
        write_loss_csv(os.path.join(out_dir, "losses.csv"), history)
    return gan, opts, history


def write_loss_csv(path: str, history) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,d_loss_whole,d_loss_segments,g_loss\n")
        for step, dw, ds, g in history:
            fh.write(f"{step},{dw:.8f},{ds:.8f},{g:.8f}\n")


# -- checkpointing -----------------------------------------------------------------


def config_fingerprint(gan: GanModel) -> str:
    blob = json.dumps({
        "generator": asdict(gan.gen_cfg),
        "discriminator": asdict(gan.disc_cfg),
        "segment": asdict(gan.seg_cfg),
        "one_discriminator": gan.one_discriminator,
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _named_arrays(gan: GanModel, opts: Optional[Dict[str, Adam]]):
    arrays = {}
    for name, t in gan.named_parameters().items():
        arrays[f"param/{name}"] = t.data
    for name, t in gan.named_buffers().items():
        arrays[f"buffer/{name}"] = t.data
    if opts:
        for opt_name, opt in opts.items():
            for pname, m in opt.state.m.items():
                arrays[f"opt/{opt_name}/m/{pname}"] = m
            for pname, v in opt.state.v.items():
                arrays[f"opt/{opt_name}/v/{pname}"] = v
    return arrays


def save_checkpoint(path: str, gan: GanModel, opts: Optional[Dict[str, Adam]],
                    step: int, fingerprint: Optional[str] = None) -> None:
    """Write every named tensor (and optimizer moments) with a JSON header."""
    arrays = _named_arrays(gan, opts)
    entries = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": arr.dtype.str, "offset": offset})
        offset += arr.nbytes
    header = {
        "fingerprint": fingerprint or config_fingerprint(gan),
        "step": int(step),
        "opt_steps": {name: opt.state.t for name, opt in (opts or {}).items()},
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in sorted(arrays):
            fh.write(np.ascontiguousarray(arrays[name]).tobytes())


def load_checkpoint(path: str, gan: GanModel,
                    opts: Optional[Dict[str, Adam]] = None,
                    expect_fingerprint: Optional[str] = None) -> int:
    """Restore parameters (and optimizer state) in place; returns the step."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint file")
        try:
            header_len = int.from_bytes(fh.read(8), "little")
            header = json.loads(fh.read(header_len).decode())
            payload = fh.read()
        except (ValueError, UnicodeDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: corrupt header: {exc}") from exc
    want = expect_fingerprint or config_fingerprint(gan)
    if header.get("fingerprint") != want:
        raise IncompatibleCheckpointError(
            f"{path}: checkpoint was written for a different configuration")
    loaded = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(payload):
            raise CheckpointFormatError(f"{path}: truncated payload")
        loaded[entry["name"]] = np.frombuffer(
            payload[start:end], dtype=dtype).reshape(shape).copy()
    for name, t in gan.named_parameters().items():
        key = f"param/{name}"
        if key not in loaded:
            raise CheckpointFormatError(f"{path}: missing tensor {key}")
        t.data = loaded[key]
    for name, t in gan.named_buffers().items():
        key = f"buffer/{name}"
        if key in loaded:
            t.data = loaded[key]
    if opts:
        for opt_name, opt in opts.items():
            opt.state.t = int(header.get("opt_steps", {}).get(opt_name, 0))
            for pname in list(opt.params):
                mk = f"opt/{opt_name}/m/{pname}"
                vk = f"opt/{opt_name}/v/{pname}"
                if mk in loaded:
                    opt.state.m[pname] = loaded[mk]
                    opt.state.v[pname] = loaded[vk]
    return int(header["step"])
