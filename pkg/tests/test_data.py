import json

import numpy as np
import pytest
from scipy import stats

from radargan.data import (
    EvalReport,
    SceneFormatError,
    SceneRecord,
    augmented,
    build_curand_testset,
    build_rand_testset,
    evaluate_testsets,
    filter_min_detections,
    load_scenes,
    save_scenes,
    split_real_testset,
    toy_dataset_generate,
)
from radargan.geom import PointSet


def make_record(i, n_points, sequence="seq-0", rng=None):
    rng = rng or np.random.default_rng(i)
    return SceneRecord(id=f"s{i}", sequence=sequence, sensor=2,
                       points=PointSet(rng.uniform(0, 100, size=(n_points, 2))))


class TestPersistence:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_scenes(path) == []

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        records = [make_record(i, int(rng.integers(1, 50)), f"seq-{i % 3}")
                   for i in range(100)]
        path = tmp_path / "scenes.jsonl"
        save_scenes(path, records)
        assert load_scenes(path) == records

    def test_features_preserved(self, tmp_path):
        rec = SceneRecord(id="a", sequence="s", sensor=3,
                          points=PointSet([(1, 2)], [[0.5, -1.5]]))
        path = tmp_path / "f.jsonl"
        save_scenes(path, [rec])
        (loaded,) = load_scenes(path)
        np.testing.assert_array_equal(loaded.points.features, [[0.5, -1.5]])

    def test_nan_coordinate_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = json.dumps({"id": "a", "sequence": "s", "sensor": 2,
                           "points": [[1.0, 2.0]]})
        bad = json.dumps({"id": "b", "sequence": "s", "sensor": 2,
                          "points": [[1.0, None]]})
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(SceneFormatError, match="line 2"):
            load_scenes(path)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"\n')
        with pytest.raises(SceneFormatError, match="line 1"):
            load_scenes(path)


class TestFilterMinDetections:
    def test_boundary(self):
        scenes = [make_record(0, 5), make_record(1, 30), make_record(2, 100)]
        kept = filter_min_detections(scenes, 30)
        assert [len(s.points) for s in kept] == [30, 100]

    def test_min_zero_is_identity(self):
        scenes = [make_record(i, i + 1) for i in range(5)]
        assert filter_min_detections(scenes, 0) == scenes

    def test_all_below(self):
        assert filter_min_detections([make_record(0, 3)], 30) == []

    def test_output_subset_with_counts_above_threshold(self):
        rng = np.random.default_rng(1)
        scenes = [make_record(i, int(rng.integers(1, 80))) for i in range(40)]
        kept = filter_min_detections(scenes, 25)
        assert all(len(s.points) >= 25 for s in kept)
        assert all(s in scenes for s in kept)


class TestSplitRealTestset:
    def _scenes(self, sequences=4, per=12):
        return [make_record(q * 100 + i, 20, f"seq-{q}")
                for q in range(sequences) for i in range(per)]

    def test_counts_and_disjointness(self):
        scenes = self._scenes()
        test, rest = split_real_testset(scenes, per_sequence=10, seed=0)
        assert len(test) == 40
        assert len(rest) == len(scenes) - 40
        assert {s.id for s in test}.isdisjoint({s.id for s in rest})

    def test_seed_reproducible(self):
        scenes = self._scenes()
        a, _ = split_real_testset(scenes, per_sequence=10, seed=5)
        b, _ = split_real_testset(scenes, per_sequence=10, seed=5)
        assert a == b

    def test_per_sequence_zero(self):
        test, rest = split_real_testset(self._scenes(), per_sequence=0, seed=0)
        assert test == []
        assert len(rest) == 48

    def test_undersized_sequence_named_in_error(self):
        scenes = self._scenes() + [make_record(999, 20, "tiny")]
        with pytest.raises(ValueError, match="tiny"):
            split_real_testset(scenes, per_sequence=10, seed=0)

    def test_130_sequences_give_1300(self):
        scenes = [make_record(q * 100 + i, 10, f"seq-{q:03d}")
                  for q in range(130) for i in range(11)]
        test, _ = split_real_testset(scenes, per_sequence=10, seed=1)
        assert len(test) == 1300


class TestRandTestset:
    def test_count_bounds(self):
        scenes = build_rand_testset(50, seed=0)
        counts = [len(s.points) for s in scenes]
        assert all(1 <= c <= 512 for c in counts)

    def test_seed_reproducible(self):
        a = build_rand_testset(10, seed=3)
        b = build_rand_testset(10, seed=3)
        assert a == b

    def test_coordinates_uniform(self):
        scenes = build_rand_testset(300, seed=7)
        xy = np.concatenate([s.points.xy for s in scenes])[:100_000]
        for axis, (lo, hi) in enumerate ([(0, 100), (-50, 50)]):
            hist, _ = np.histogram(xy[:, axis], bins=16, range=(lo, hi))
            p = stats.chisquare(hist).pvalue
            assert p > 0.01, f"axis {axis} non-uniform (p={p})"


class TestCuRandTestset:
    def test_bounds_and_counts(self):
        scenes = build_curand_testset(50, seed=0)
        for s in scenes:
            assert 30 <= len(s.points) <= 512
            assert (np.abs(s.points.xy[:, 1]) <= 50).all()
            assert (s.points.xy[:, 0] >= 0).all()
            assert (s.points.xy[:, 0] <= 100).all()

    def test_center_density_higher_than_uniform(self):
        scenes = build_curand_testset(100, seed=1)
        y = np.concatenate([s.points.xy[:, 1] for s in scenes])
        assert np.abs(y).mean() < 50 / 2

    def test_seed_reproducible(self):
        assert build_curand_testset(5, seed=9) == build_curand_testset(5, seed=9)


class TestToyDataset:
    def test_minimum_scene_size(self):
        scenes = toy_dataset_generate(200, seed=0)
        assert all(len(s.points) >= 30 for s in scenes)
        assert all(len(s.points) <= 512 for s in scenes)

    def test_seed_reproducible(self):
        assert toy_dataset_generate(5, seed=4) == toy_dataset_generate(5, seed=4)

    def test_guardrail_lines_present(self):
        scenes = toy_dataset_generate(50, seed=2)
        for s in scenes:
            y = s.points.xy[:, 1]
            assert (np.abs(y - 25) < 3).sum() >= 10
            assert (np.abs(y + 25) < 3).sum() >= 10

    def test_within_fov(self):
        scenes = toy_dataset_generate(50, seed=3)
        for s in scenes:
            assert (s.points.xy[:, 0] >= 0).all()
            assert (s.points.xy[:, 0] <= 100).all()
            assert (np.abs(s.points.xy[:, 1]) <= 50).all()


class TestEvaluateTestsets:
    @staticmethod
    def _all_sets(scenes):
        return {k: scenes for k in ["Real", "Gen", "Rand", "CuRand"]}

    def test_ratio_arithmetic(self):
        scenes = [make_record(i, 10) for i in range(4)]
        votes = iter([True, False, True, True] * 4)
        report = evaluate_testsets(lambda s: next(votes),
                                   self._all_sets(scenes))
        assert report.ratio("Real") == 0.75

    def test_row_order_matches_taxonomy(self):
        sets = {k: [make_record(0, 5)] for k in
                ["CuRand", "Gen", "Real", "Rand"]}
        report = evaluate_testsets(lambda s: True, sets)
        assert [r[0] for r in report.rows] == ["Real", "Gen", "Rand", "CuRand"]

    def test_duplicated_scene_ratio_is_zero_or_one(self):
        scenes = [make_record(0, 10)] * 8
        calls = []

        def classifier(scene):
            calls.append(scene)
            return len(calls) % 1 == 0  # deterministic: always True
        report = evaluate_testsets(classifier, self._all_sets(scenes))
        assert report.ratio("Gen") in (0.0, 1.0)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            evaluate_testsets(lambda s: True, self._all_sets([]))

    def test_csv_format(self):
        report = EvalReport(rows=[("Real", 0.868, 1300), ("Gen", 0.875, 1300)])
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "test_set,ratio,n"
        assert lines[1].startswith("Real,0.868")


class TestAugmented:
    def test_doubles_and_mirrors(self):
        rec = make_record(0, 12)
        out = augmented([rec])
        assert len(out) == 2
        np.testing.assert_array_equal(out[1].points.xy[:, 1],
                                      -rec.points.xy[:, 1])
        assert out[1].id != rec.id
