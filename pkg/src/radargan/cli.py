"""Command-line interface: train, generate, make-testset, evaluate,
gradcheck, inspect.

Exit codes: 0 success, 1 check/evaluation failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as datamod
from .config import ConfigError, RunConfig, load_run_config
from .geom import SEGMENT_IDS, PointSet, SegmentSpec, segment_index
from .gradcheck import run_gradcheck_suite
from .model import (
    GanModel,
    single_layer_discriminator,
    single_layer_generator,
)
from .nn import no_grad
from .train import (
    IncompatibleCheckpointError,
    CheckpointFormatError,
    load_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _build_gan(rc: RunConfig) -> GanModel:
    gen_cfg, disc_cfg, seg_cfg = rc.generator, rc.discriminator, rc.segment
    if rc.train.single_layer:
        gen_cfg = single_layer_generator(gen_cfg)
        disc_cfg = single_layer_discriminator(disc_cfg)
        seg_cfg = single_layer_discriminator(seg_cfg)
    return GanModel(np.random.default_rng(0), gen_cfg, disc_cfg, seg_cfg,
                    one_discriminator=rc.train.one_discriminator)


def _load_gan(checkpoint_path: str, rc: RunConfig) -> GanModel:
    gan = _build_gan(rc)
    load_checkpoint(checkpoint_path, gan)
    return gan


def cmd_train(args) -> int:
    overrides = {"seed": args.seed}
    for flag in args.ablation or []:
        if flag == "single_layer":
            overrides["single_layer"] = True
        elif flag == "one_discriminator":
            overrides["one_discriminator"] = True
        elif flag == "min_detections":
            overrides["min_detections"] = 30
    rc = load_run_config(args.config, overrides)
    dataset_path = args.dataset or rc.dataset_path
    if not dataset_path:
        print("error: no dataset given (set data.dataset in the config "
              "or pass --dataset)", file=sys.stderr)
        return EXIT_USAGE
    dataset = datamod.load_scenes(dataset_path)
    os.makedirs(args.out, exist_ok=True)
    _, _, history = train(dataset, rc.train, rc.generator, rc.discriminator,
                          rc.segment, out_dir=args.out)
    last = history[-1]
    print(f"steps={last[0]} d_loss_whole={last[1]:.4f} "
          f"d_loss_segments={last[2]:.4f} g_loss={last[3]:.4f}")
    print(f"wrote {os.path.join(args.out, 'final.ckpt')} and losses.csv")
    return EXIT_OK


def cmd_generate(args) -> int:
    rc = load_run_config(args.config)
    if rc.train.single_layer is False and args.ablation_single_layer:
        rc.train.single_layer = True
    gan = _load_gan(args.checkpoint, rc)
    rng = np.random.default_rng(args.seed)
    records = []
    batch = 64
    with no_grad():
        for lo in range(0, args.n, batch):
            b = min(batch, args.n - lo)
            z = gan.generator.sample_noise(rng, b)
            coords = gan.generator(z, mode="eval").data
            for i in range(b):
                records.append(datamod.SceneRecord(
                    id=f"gen-{args.seed}-{lo + i}", sequence="gen", sensor=0,
                    points=PointSet(coords[i].astype(np.float64))))
    datamod.save_scenes(args.out, records)
    print(f"wrote {len(records)} scenes to {args.out}")
    return EXIT_OK


def cmd_make_testset(args) -> int:
    if args.kind == "rand":
        records = datamod.build_rand_testset(
            args.n, max_points=args.max_points, d=args.d, w=args.w,
            seed=args.seed)
    elif args.kind == "curand":
        records = datamod.build_curand_testset(
            args.n, max_points=args.max_points, d=args.d, w=args.w,
            lateral_sigma=args.lateral_sigma, seed=args.seed)
    elif args.kind == "toy":
        records = datamod.toy_dataset_generate(
            args.n, seed=args.seed, d=args.d, w=args.w)
    elif args.kind == "real-split":
        if not args.dataset:
            print("error: real-split needs --dataset", file=sys.stderr)
            return EXIT_USAGE
        scenes = datamod.load_scenes(args.dataset)
        records, rest = datamod.split_real_testset(
            scenes, per_sequence=args.per_sequence, seed=args.seed)
        if args.remainder_out:
            datamod.save_scenes(args.remainder_out, rest)
    else:  # pragma: no cover - argparse restricts choices
        return EXIT_USAGE
    datamod.save_scenes(args.out, records)
    print(f"wrote {len(records)} scenes to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rc = load_run_config(args.config)
    gan = _load_gan(args.checkpoint, rc)
    sets = {}
    for kind, path in (("Real", args.real), ("Gen", args.gen),
                       ("Rand", args.rand), ("CuRand", args.curand)):
        sets[kind] = datamod.load_scenes(path)
    report = datamod.evaluate_testsets(gan.classify, sets)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    print("test_set ratio n")
    for name, ratio, n in report.rows:
        print(f"{name} {ratio:.3f} {n}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + args.repeats)
    results = run_gradcheck_suite(seeds, corrupt=args.corrupt)
    ok = True
    for res in results:
        status = "pass" if res.passed else "FAIL"
        print(f"{res.name}: max_rel_err={res.max_rel_err:.3e} "
              f"tol={res.tolerance:.0e} {status}")
        ok = ok and res.passed
    if not ok:
        worst = max(res.max_rel_err for res in results)
        print(f"gradcheck FAILED, worst relative error {worst:.3e}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_inspect(args) -> int:
    records = datamod.load_scenes(args.scenes)
    spec = SegmentSpec(args.d)
    os.makedirs(args.out, exist_ok=True)
    points_path = os.path.join(args.out, "points.csv")
    occupancy_path = os.path.join(args.out, "occupancy.csv")
    counts = {str(seg): 0 for seg in SEGMENT_IDS}
    counts["out_of_fov"] = 0
    with open(points_path, "w", encoding="utf-8") as fh:
        fh.write("scene_id,x,y\n")
        for rec in records:
            labels, _ = segment_index(rec.points.xy, spec)
            for (x, y), label in zip(rec.points.xy, labels):
                fh.write(f"{rec.id},{x:.6f},{y:.6f}\n")
                key = str(SEGMENT_IDS[label]) if label >= 0 else "out_of_fov"
                counts[key] += 1
    with open(occupancy_path, "w", encoding="utf-8") as fh:
        fh.write("segment,count\n")
        for key, value in counts.items():
            fh.write(f"{key},{value}\n")
    print(f"wrote {points_path} and {occupancy_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radargan",
        description="Point-cloud scene GAN: training, generation, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the GAN on a scene dataset")
    p.add_argument("--config", help="run config file (INI)")
    p.add_argument("--dataset", help="scene JSONL (overrides data.dataset)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ablation", action="append",
                   choices=["single_layer", "one_discriminator",
                            "min_detections"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample scenes from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("-n", type=int, default=1300)
    p.add_argument("--config", help="run config matching the checkpoint")
    p.add_argument("--ablation-single-layer", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("make-testset", help="build a test set")
    p.add_argument("kind", choices=["rand", "curand", "toy", "real-split"])
    p.add_argument("-n", type=int, default=1300)
    p.add_argument("--max-points", type=int, default=512)
    p.add_argument("--d", type=float, default=100.0)
    p.add_argument("--w", type=float, default=50.0)
    p.add_argument("--lateral-sigma", type=float, default=None)
    p.add_argument("--dataset", help="source scenes for real-split")
    p.add_argument("--per-sequence", type=int, default=10)
    p.add_argument("--remainder-out", help="where to write the non-test rest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_testset)

    p = sub.add_parser("evaluate", help="classifier ratios on four test sets")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="run config matching the checkpoint")
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--rand", required=True)
    p.add_argument("--curand", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="scatter and segment-occupancy CSVs")
    p.add_argument("scenes")
    p.add_argument("--d", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IncompatibleCheckpointError,
            CheckpointFormatError, datamod.SceneFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
