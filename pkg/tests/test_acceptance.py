"""End-to-end acceptance gate.

Each test prints one PASS/FAIL line for its criterion. The expensive
end-to-end runs (criteria 8-10) train real models and take tens of minutes
on one core; everything else is seconds.
"""

import time

import numpy as np
import pytest

from radargan.data import (
    SceneRecord,
    build_curand_testset,
    build_rand_testset,
    evaluate_testsets,
    filter_min_detections,
    load_scenes,
    save_scenes,
    toy_dataset_generate,
)
from radargan.geom import (
    PointSet,
    ball_query,
    farthest_point_sample,
    idw_interpolate,
    knn,
    mirror_scene,
)
from radargan.gradcheck import composite_gradcheck, discriminator_gradcheck
from radargan.model import (
    Discriminator,
    GanModel,
    toy_discriminator_config,
    toy_generator_config,
    toy_segment_discriminator_config,
)
from radargan.nn import AdamState, Tensor, adam_step, backward, cross_entropy
from radargan.train import (
    TrainConfig,
    Adam,
    composite_loss,
    config_fingerprint,
    gan_step,
    load_checkpoint,
    make_optimizers,
    save_checkpoint,
    train,
)

TOY_TRAIN_SCENES = 2000
TOY_EPOCHS = 35
TOY_SEEDS = (0, 1, 2)
TESTSET_SIZE = 200


def report(criterion: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[criterion {criterion:2d}] {status}: {name}{suffix}")
    assert ok, f"criterion {criterion} failed: {name}{suffix}"


# -- criterion 1: FPS oracle equivalence --------------------------------------


def _brute_force_fps(xy, k, start):
    chosen = [start]
    while len(chosen) < k:
        dists = np.hypot(*(xy[:, None, :] - xy[None, chosen, :]).T).T
        min_d = dists.min(axis=1)
        min_d[chosen] = -1.0
        chosen.append(int(min_d.argmax()))  # argmax ties -> lowest index
    return chosen


def test_criterion_01_fps_oracle():
    rng = np.random.default_rng(101)
    t0 = time.time()
    for _ in range(200):
        n = int(rng.integers(1, 65))
        xy = rng.uniform(-50, 50, size=(n, 2))
        k = int(rng.integers(1, n + 1))
        start = int(rng.integers(n))
        got = list(farthest_point_sample(xy, k, start))
        assert got == _brute_force_fps(xy, k, start)
    elapsed = time.time() - t0
    report(1, "FPS matches brute-force greedy max-min oracle on 200 sets",
           elapsed < 5.0, f"{elapsed:.2f}s")


# -- criterion 2: ball query / kNN soundness -----------------------------------


def test_criterion_02_neighbor_soundness():
    rng = np.random.default_rng(202)
    t0 = time.time()
    for _ in range(200):
        n = int(rng.integers(2, 40))
        m = int(rng.integers(1, 6))
        pts = rng.uniform(-10, 10, size=(n, 2))
        centers = rng.uniform(-10, 10, size=(m, 2))
        radius = float(rng.uniform(0.5, 8.0))
        max_s = int(rng.integers(1, 12))
        groups, empty = ball_query(centers, pts, radius, max_s)
        for c in range(m):
            dists = np.hypot(*(pts - centers[c]).T)
            in_range = [i for i in range(n) if dists[i] <= radius]
            if not in_range:
                assert empty[c]
                continue
            assert not empty[c]
            expected = in_range[:max_s]
            expected += [expected[0]] * (max_s - len(expected))
            assert groups[c].tolist() == expected
        k = int(rng.integers(1, n + 1))
        idx, dist = knn(centers, pts, k)
        for c in range(m):
            d = np.hypot(*(pts - centers[c]).T)
            order = np.lexsort((np.arange(n), d))[:k]
            assert idx[c].tolist() == order.tolist()
            np.testing.assert_allclose(dist[c], d[order], rtol=1e-12)
    elapsed = time.time() - t0
    report(2, "ball_query/kNN verified by independent linear scans (200x)",
           elapsed < 5.0, f"{elapsed:.2f}s")


# -- criterion 3: IDW correctness -----------------------------------------------


def test_criterion_03_idw():
    rng = np.random.default_rng(303)
    t0 = time.time()
    sources = rng.uniform(0, 100, size=(64, 2))
    features = rng.normal(size=(64, 5))
    queries = rng.uniform(0, 100, size=(1000, 2))
    # weight normalization: interpolating all-ones stays all-ones
    ones = idw_interpolate(queries, sources, np.ones((64, 1)), k=4)
    sums_ok = np.abs(ones - 1.0).max() < 1e-9
    # coincident query reproduces the source feature
    coincident = idw_interpolate(sources[:10], sources, features, k=4,
                                 eps=1e-8)
    rel = np.abs(coincident - features[:10]) / np.maximum(
        np.abs(features[:10]), 1e-12)
    coincident_ok = rel.max() < 1e-6
    elapsed = time.time() - t0
    report(3, "IDW weights sum to 1 (1e-9) and coincident queries "
              "reproduce features (1e-6)",
           sums_ok and coincident_ok and elapsed < 2.0,
           f"{elapsed:.2f}s, sum_err={np.abs(ones - 1.0).max():.2e}, "
           f"coin_err={rel.max():.2e}")


# -- criterion 4: gradient checks ------------------------------------------------


def test_criterion_04_gradcheck():
    t0 = time.time()
    worst_disc, worst_comp = 0.0, 0.0
    for seed in range(10):
        d = discriminator_gradcheck(seed=seed)
        c = composite_gradcheck(seed=seed)
        worst_disc = max(worst_disc, d.max_rel_err)
        worst_comp = max(worst_comp, c.max_rel_err)
    elapsed = time.time() - t0
    report(4, "finite-difference gradients: discriminator <1e-4, "
              "composite <1e-3, 10 seeds",
           worst_disc < 1e-4 and worst_comp < 1e-3 and elapsed < 180,
           f"disc={worst_disc:.2e}, composite={worst_comp:.2e}, "
           f"{elapsed:.1f}s")


# -- criterion 5: Adam single step ------------------------------------------------


def test_criterion_05_adam_single_step():
    params = {"theta": np.array([1.0])}
    state = AdamState()
    adam_step(params, {"theta": np.array([2.0])}, state)
    expected = 1.0 - 2e-4 * (2.0 / (2.0 + 1e-8))
    err = abs(params["theta"][0] - expected)
    report(5, "Adam step theta0=1, g=2 matches hand evaluation within 1e-9",
           err < 1e-9, f"err={err:.2e}")


# -- criterion 6: Eq. (1) composition ---------------------------------------------


def test_criterion_06_composite_loss():
    whole = Tensor(np.array(0.7))
    segs = [Tensor(np.array(0.1)) for _ in range(6)]
    reduction_ok = composite_loss(whole, segs, 0.0).data == 0.7
    worked = composite_loss(whole, segs, 0.6).data
    worked_ok = abs(worked - 1.06) < 1e-12
    skip = composite_loss(Tensor(np.array(0.5)),
                          [None, None, None,
                           Tensor(np.array(0.2)), Tensor(np.array(0.2)),
                           Tensor(np.array(0.2))], 0.6).data
    skip_ok = abs(skip - (0.5 + 0.6 * 0.6)) < 1e-12
    report(6, "composite loss: lambda=0 reduction, worked example 1.06, "
              "skip rule",
           reduction_ok and worked_ok and skip_ok,
           f"worked={worked:.6f}")


# -- criterion 7: mirroring ---------------------------------------------------------


def test_criterion_07_mirroring():
    rng = np.random.default_rng(707)
    involution_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        scene = PointSet(np.c_[rng.uniform(0, 100, n),
                               rng.uniform(-50, 50, n)])
        twice = mirror_scene(mirror_scene(scene))
        involution_ok &= bool((twice.xy == scene.xy).all())
    scenes = [PointSet(np.c_[rng.uniform(0, 100, 50),
                             rng.uniform(-50, 50, 50)]) for _ in range(100)]
    doubled = scenes + [mirror_scene(s) for s in scenes]
    y = np.concatenate([s.xy[:, 1] for s in doubled])
    hist, _ = np.histogram(y, bins=20, range=(-50, 50))
    symmetric_ok = bool((hist == hist[::-1]).all())
    report(7, "mirror involution bit-exact on 1000 scenes; "
              "doubled-set y-histogram symmetric",
           involution_ok and symmetric_ok)


# -- criterion 8: supervised separability -------------------------------------------


def _pad(xys, width=None):
    width = width or max(len(a) for a in xys)
    out = np.zeros((len(xys), width, 2), dtype=np.float32)
    for i, a in enumerate(xys):
        idx = np.arange(width) % len(a)
        out[i] = a[idx]
    return out


def test_criterion_08_supervised_separability():
    t0 = time.time()
    toy = [r.points.xy for r in toy_dataset_generate(2000, seed=808)]
    rand = [r.points.xy for r in build_rand_testset(2000, seed=809)]
    train_toy, held_toy = toy[:1800], toy[1800:]
    train_rand, held_rand = rand[:1800], rand[1800:]
    rng = np.random.default_rng(810)
    disc = Discriminator(rng, toy_discriminator_config())
    opt = Adam(disc.named_parameters())
    accuracy = 0.0
    for step in range(500):
        ti = rng.integers(0, len(train_toy), size=32)
        ri = rng.integers(0, len(train_rand), size=32)
        batch = [train_toy[i] for i in ti] + [train_rand[i] for i in ri]
        labels = [0] * 32 + [1] * 32
        probs = disc(Tensor(_pad(batch)), mode="train", fps_rng=rng)
        loss = cross_entropy(probs, labels)
        opt.zero_grad()
        backward(loss)
        opt.step()
        if (step + 1) % 50 == 0 or step == 499:
            correct = 0
            for xy in held_toy:
                correct += disc(Tensor(_pad([xy])),
                                mode="eval").data[0, 0] > 0.5
            for xy in held_rand:
                correct += disc(Tensor(_pad([xy])),
                                mode="eval").data[0, 0] <= 0.5
            accuracy = correct / (len(held_toy) + len(held_rand))
            if accuracy >= 0.95:
                break
    elapsed = time.time() - t0
    report(8, "discriminator alone separates toy vs Rand at >=95% held-out "
              "accuracy within 500 steps",
           accuracy >= 0.95 and elapsed < 600,
           f"accuracy={accuracy:.3f}, steps={step + 1}, {elapsed:.0f}s")


# -- criteria 9 & 10: end-to-end toy GAN and ablation ordering ----------------------


def _toy_run(seed: int, single_layer: bool):
    data = toy_dataset_generate(TOY_TRAIN_SCENES + TESTSET_SIZE, seed=900)
    train_set, real_test = data[:TOY_TRAIN_SCENES], data[TOY_TRAIN_SCENES:]
    cfg = TrainConfig(lam=0.6, batch_size=64, epochs=TOY_EPOCHS, seed=seed,
                      augment=False, checkpoint_every=0,
                      single_layer=single_layer)
    gan, _, _ = train(train_set, cfg, toy_generator_config(),
                      toy_discriminator_config(),
                      toy_segment_discriminator_config())
    rng = np.random.default_rng(seed + 4000)
    gen_records = []
    from radargan.nn import no_grad
    with no_grad():
        for lo in range(0, TESTSET_SIZE, 64):
            b = min(64, TESTSET_SIZE - lo)
            z = gan.generator.sample_noise(rng, b)
            coords = gan.generator(z, mode="eval").data
            gen_records += [SceneRecord(
                id=f"g{lo + i}", sequence="gen", sensor=0,
                points=PointSet(coords[i].astype(np.float64)))
                for i in range(b)]
    sets = {
        "Real": real_test,
        "Gen": gen_records,
        "Rand": build_rand_testset(TESTSET_SIZE, seed=seed + 1),
        "CuRand": build_curand_testset(TESTSET_SIZE, seed=seed + 2),
    }
    rep = evaluate_testsets(gan.classify, sets)
    return {name: rep.ratio(name) for name in
            ("Real", "Gen", "Rand", "CuRand")}


@pytest.fixture(scope="module")
def toy_gan_runs():
    full, ablated = {}, {}
    for seed in TOY_SEEDS:
        full[seed] = _toy_run(seed, single_layer=False)
        ablated[seed] = _toy_run(seed, single_layer=True)
        print(f"\n[toy run seed {seed}] full={full[seed]} "
              f"ablated={ablated[seed]}")
    return full, ablated


def _criterion9_holds(r):
    return (r["Real"] >= r["Rand"] + 0.3 and r["Gen"] >= r["Rand"] + 0.2
            and abs(r["Real"] - r["Gen"]) <= 0.25)


def test_criterion_09_end_to_end_toy_gan(toy_gan_runs):
    full, _ = toy_gan_runs
    passes = [seed for seed in TOY_SEEDS if _criterion9_holds(full[seed])]
    detail = "; ".join(
        f"seed {s}: Real={full[s]['Real']:.2f} Gen={full[s]['Gen']:.2f} "
        f"Rand={full[s]['Rand']:.2f} CuRand={full[s]['CuRand']:.2f}"
        for s in TOY_SEEDS)
    report(9, "toy GAN orderings (Real>=Rand+0.3, Gen>=Rand+0.2, "
              "|Real-Gen|<=0.25) on >=2 of 3 seeds",
           len(passes) >= 2, detail)


def test_criterion_10_ablation_ordering(toy_gan_runs):
    full, ablated = toy_gan_runs
    passes = [seed for seed in TOY_SEEDS
              if ablated[seed]["Gen"] <= full[seed]["Gen"] - 0.05]
    detail = "; ".join(
        f"seed {s}: full_gen={full[s]['Gen']:.2f} "
        f"ablated_gen={ablated[s]['Gen']:.2f}" for s in TOY_SEEDS)
    report(10, "single-layer ablation Gen ratio below full model by >=0.05 "
               "on >=2 of 3 seeds",
           len(passes) >= 2, detail)


# -- criterion 11: filtering ----------------------------------------------------------


def test_criterion_11_min_detection_filter():
    scenes = [SceneRecord(id=f"s{n}", sequence="q", sensor=2,
                          points=PointSet(np.ones((n, 2))))
              for n in (29, 30, 31)]
    kept = filter_min_detections(scenes, 30)
    ok = [len(s.points) for s in kept] == [30, 31]
    report(11, "filter_min_detections(.,30) keeps exactly {30,31} from "
               "boundary set {29,30,31}", ok)


# -- criterion 12: persistence ----------------------------------------------------------


def test_criterion_12_persistence(tmp_path):
    # checkpoint round trip, bit-exact
    rng = np.random.default_rng(12)
    gan = GanModel(rng, toy_generator_config(), toy_discriminator_config(),
                   toy_segment_discriminator_config())
    cfg = TrainConfig(batch_size=4)
    opts = make_optimizers(gan, cfg)
    batch = [r.points.xy for r in toy_dataset_generate(4, seed=13)]
    gan_step(batch, gan, opts, cfg, rng)
    ckpt = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, gan, opts, step=1,
                    fingerprint=config_fingerprint(gan))
    gan2 = GanModel(np.random.default_rng(99), toy_generator_config(),
                    toy_discriminator_config(),
                    toy_segment_discriminator_config())
    load_checkpoint(ckpt, gan2, make_optimizers(gan2, cfg))
    params1 = gan.named_parameters()
    params2 = gan2.named_parameters()
    ckpt_ok = all((params1[k].data == params2[k].data).all()
                  for k in params1)

    # scene JSONL round trip, record-exact
    records = toy_dataset_generate(50, seed=14)
    scene_path = tmp_path / "scenes.jsonl"
    save_scenes(scene_path, records)
    jsonl_ok = load_scenes(scene_path) == records

    # cmd_generate n=1300 emits 1300 parseable scenes
    from radargan import cli
    out = tmp_path / "generated.jsonl"
    code = cli.main(["generate", str(ckpt), "-n", "1300",
                     "--seed", "5", "--out", str(out)])
    generated = load_scenes(out)
    generate_ok = code == 0 and len(generated) == 1300

    report(12, "checkpoint bit-exact, JSONL record-exact, cmd_generate "
               "n=1300 parseable",
           ckpt_ok and jsonl_ok and generate_ok,
           f"generated={len(generated)}")
