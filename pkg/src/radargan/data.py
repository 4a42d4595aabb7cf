"""Scene persistence, dataset filtering/splitting, and test-set builders.

Scene files are JSON lines: one object per line with fields ``id`` (string),
``sequence`` (string), ``sensor`` (integer), ``points`` (list of [x, y]
pairs in meters) and optionally ``features`` (per-point numeric rows).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geom import PointSet, mirror_scene

MAX_SCENE_POINTS = 512
TEST_SET_KINDS = ("Real", "Gen", "Rand", "CuRand")


class SceneFormatError(ValueError):
    """Raised for unparseable or invalid scene file content."""


@dataclass
class SceneRecord:
    id: str
    sequence: str
    sensor: int
    points: PointSet

    def __eq__(self, other):
        if not isinstance(other, SceneRecord):
            return NotImplemented
        return (self.id == other.id and self.sequence == other.sequence
                and self.sensor == other.sensor and self.points == other.points)


@dataclass
class EvalReport:
    """Per-test-set ratio of samples the classifier labels real."""

    rows: List[Tuple[str, float, int]] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["test_set,ratio,n"]
        lines += [f"{name},{ratio:.6f},{n}" for name, ratio, n in self.rows]
        return "\n".join(lines) + "\n"

    def ratio(self, name: str) -> float:
        for row_name, ratio, _ in self.rows:
            if row_name == name:
                return ratio
        raise KeyError(name)


# -- persistence ---------------------------------------------------------------


def _record_to_obj(rec: SceneRecord) -> dict:
    obj = {
        "id": rec.id,
        "sequence": rec.sequence,
        "sensor": rec.sensor,
        "points": [[float(x), float(y)] for x, y in rec.points.xy],
    }
    if rec.points.features is not None:
        obj["features"] = [[float(v) for v in row]
                           for row in rec.points.features]
    return obj


def save_scenes(path, records: Sequence[SceneRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_obj(rec)) + "\n")


def load_scenes(path) -> List[SceneRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                points = np.asarray(obj["points"], dtype=np.float64)
                points = points.reshape(-1, 2)
                feats = obj.get("features")
                rec = SceneRecord(
                    id=str(obj["id"]), sequence=str(obj["sequence"]),
                    sensor=int(obj["sensor"]),
                    points=PointSet(points, feats))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise SceneFormatError(
                    f"{path}: malformed scene on line {lineno}: {exc}") from exc
            except ValueError as exc:
                raise SceneFormatError(
                    f"{path}: invalid scene on line {lineno}: {exc}") from exc
            if len(rec.points) > MAX_SCENE_POINTS:
                raise SceneFormatError(
                    f"{path}: line {lineno}: scene exceeds "
                    f"{MAX_SCENE_POINTS} points")
            records.append(rec)
    return records


# -- filtering / splitting -------------------------------------------------------


def filter_min_detections(scenes: Sequence[SceneRecord],
                          min_count: int = 30) -> List[SceneRecord]:
    """Keep only scenes with at least ``min_count`` detections."""
    if min_count < 0:
        raise ValueError("min_count must be >= 0")
    return [s for s in scenes if len(s.points) >= min_count]


def split_real_testset(scenes: Sequence[SceneRecord], per_sequence: int = 10,
                       seed: int = 0):
    """Draw ``per_sequence`` random scenes from each sequence as the test set.

    Returns (test, remainder); both preserve the input order.
    """
    by_sequence: Dict[str, List[int]] = {}
    for i, rec in enumerate(scenes):
        by_sequence.setdefault(rec.sequence, []).append(i)
    undersized = [seq for seq, ids in by_sequence.items()
                  if len(ids) < per_sequence]
    if undersized:
        raise ValueError(
            "sequences with fewer than "
            f"{per_sequence} scenes: {', '.join(sorted(undersized))}")
    rng = np.random.default_rng(seed)
    test_indices = set()
    for seq in sorted(by_sequence):
        ids = by_sequence[seq]
        picked = rng.choice(len(ids), size=per_sequence, replace=False)
        test_indices.update(ids[j] for j in picked)
    test = [scenes[i] for i in sorted(test_indices)]
    rest = [scenes[i] for i in range(len(scenes)) if i not in test_indices]
    return test, rest


# -- synthetic test-set builders --------------------------------------------------


def build_rand_testset(n: int, max_points: int = MAX_SCENE_POINTS,
                       d: float = 100.0, w: float = 50.0,
                       seed: int = 0) -> List[SceneRecord]:
    """Uniform random scenes: counts in [1, max_points], points over the FoV."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        count = int(rng.integers(1, max_points + 1))
        x = rng.uniform(0.0, d, size=count)
        y = rng.uniform(-w, w, size=count)
        records.append(SceneRecord(
            id=f"rand-{seed}-{i}", sequence="rand", sensor=0,
            points=PointSet(np.column_stack([x, y]))))
    return records


def build_curand_testset(n: int, max_points: int = MAX_SCENE_POINTS,
                         d: float = 100.0, w: float = 50.0,
                         lateral_sigma: Optional[float] = None,
                         seed: int = 0) -> List[SceneRecord]:
    """Curated random scenes: laterally center-concentrated, counts >= 30."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sigma = 0.2 * w if lateral_sigma is None else lateral_sigma
    if sigma <= 0:
        raise ValueError("lateral_sigma must be positive")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        count = int(rng.integers(30, max_points + 1))
        x = rng.uniform(0.0, d, size=count)
        y = np.empty(count)
        remaining = np.arange(count)
        while remaining.size:  # rejection-resample into [-w, w]
            draw = rng.normal(0.0, sigma, size=remaining.size)
            ok = np.abs(draw) <= w
            y[remaining[ok]] = draw[ok]
            remaining = remaining[~ok]
        records.append(SceneRecord(
            id=f"curand-{seed}-{i}", sequence="curand", sensor=0,
            points=PointSet(np.column_stack([x, y]))))
    return records


def toy_dataset_generate(n: int, seed: int = 0, d: float = 100.0,
                         w: float = 50.0) -> List[SceneRecord]:
    """Structured desk-scale scenes: guardrail lines plus a vehicle cluster.

    Every scene superimposes two longitudinal point lines at y ~ +-w/2 and one
    compact cluster near y in {-2, 2}; everywhere else the scene is empty, so
    scattering points across the whole field of view is a strong tell that a
    scene is not real.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        parts = []
        for side in (1.0, -1.0):
            count = int(rng.integers(18, 31))
            x = rng.uniform(0.0, d, size=count)
            y = side * w / 2 + rng.normal(0.0, 0.6, size=count)
            parts.append(np.column_stack([x, y]))
        count = int(rng.integers(10, 17))
        cx = rng.uniform(0.1 * d, 0.9 * d)
        cy = rng.choice([-2.0, 2.0]) + rng.normal(0.0, 0.5)
        spread = rng.uniform(0.8, 1.2)
        parts.append(np.column_stack([
            cx + rng.normal(0.0, spread, size=count),
            cy + rng.normal(0.0, spread * 0.6, size=count)]))
        xy = np.concatenate(parts, axis=0)
        xy[:, 0] = np.clip(xy[:, 0], 0.0, d)
        xy[:, 1] = np.clip(xy[:, 1], -w, w)
        if xy.shape[0] > MAX_SCENE_POINTS:
            xy = xy[:MAX_SCENE_POINTS]
        records.append(SceneRecord(
            id=f"toy-{seed}-{i}", sequence=f"toy-{i % 130:03d}", sensor=2,
            points=PointSet(xy)))
    return records


# -- evaluation -------------------------------------------------------------------


def evaluate_testsets(classify_fn: Callable[[PointSet], bool],
                      testsets: Dict[str, Sequence[SceneRecord]]) -> EvalReport:
    """Ratio of scenes classified real, per test set, in Table-row order."""
    report = EvalReport()
    for kind in TEST_SET_KINDS:
        if kind not in testsets:
            raise ValueError(f"missing test set {kind!r}")
        scenes = testsets[kind]
        if not scenes:
            raise ValueError(f"test set {kind!r} is empty")
        hits = sum(1 for rec in scenes if classify_fn(rec.points))
        report.rows.append((kind, hits / len(scenes), len(scenes)))
    return report


def augmented(scenes: Sequence[SceneRecord]) -> List[SceneRecord]:
    """Originals followed by their mirrored copies (ids suffixed '-m')."""
    out = list(scenes)
    for rec in scenes:
        out.append(SceneRecord(
            id=rec.id + "-m", sequence=rec.sequence, sensor=rec.sensor,
            points=mirror_scene(rec.points)))
    return out
