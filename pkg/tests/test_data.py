import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epan.data import (
    BoundingBox,
    DatasetManifest,
    ManifestRecord,
    align_pair,
    blur_by_averaging,
    blur_with_kernel,
    box_importance,
    importance_filter,
    iou,
    make_linear_kernel,
    nms,
    random_train_scenarios,
    read_boxes,
    search_area,
    split_by_scenario,
)
from epan.exceptions import DataError, DimensionError, GeometryError, ParameterError

from oracles import convolve_loops_reflect, nms_exhaustive, plant_shift, psnr_scan


class TestLinearKernel:
    def test_length_one_is_delta(self):
        k = make_linear_kernel(1, 0.0, 5)
        expected = np.zeros((5, 5))
        expected[2, 2] = 1.0
        np.testing.assert_allclose(k, expected, atol=1e-15)

    def test_horizontal_box(self):
        k = make_linear_kernel(5, 0.0, 7)
        expected = np.zeros((7, 7))
        expected[3, 1:6] = 0.2
        np.testing.assert_allclose(k, expected, atol=1e-15)

    def test_vertical_box(self):
        k = make_linear_kernel(3, np.pi / 2, 5)
        expected = np.zeros((5, 5))
        expected[1:4, 2] = 1 / 3
        np.testing.assert_allclose(k, expected, atol=1e-15)

    @pytest.mark.parametrize("theta", [0.0, 0.3, 1.0, 2.5])
    def test_angle_period_pi(self, theta):
        np.testing.assert_allclose(make_linear_kernel(7, theta, 9), make_linear_kernel(7, theta + np.pi, 9),
                                   atol=1e-12)

    def test_normalized_nonnegative_point_symmetric(self):
        k = make_linear_kernel(6.3, 0.7, 9)
        assert abs(k.sum() - 1) < 1e-12 and k.min() >= 0
        np.testing.assert_allclose(k, k[::-1, ::-1], atol=1e-12)

    @pytest.mark.parametrize("size,length", [(4, 3), (5, 6), (5, 0)])
    def test_invalid(self, size, length):
        with pytest.raises(ParameterError):
            make_linear_kernel(length, 0.0, size)


class TestBlur:
    def test_delta_identity(self):
        img = np.random.default_rng(0).random((3, 8, 8))
        np.testing.assert_allclose(blur_with_kernel(img, make_linear_kernel(1, 0, 3)), img, atol=1e-15)

    def test_constant_fixed_point(self):
        img = np.full((3, 6, 6), 0.42)
        np.testing.assert_allclose(blur_with_kernel(img, make_linear_kernel(5, 0.4, 5)), img, atol=1e-15)

    def test_three_tap_matches_loops(self):
        rng = np.random.default_rng(1)
        img = rng.random((2, 7, 6))
        kernel = np.zeros((3, 3))
        kernel[1] = [0.2, 0.5, 0.3]  # deliberately asymmetric to catch a missing flip
        np.testing.assert_allclose(blur_with_kernel(img, kernel), convolve_loops_reflect(img, kernel),
                                   atol=1e-12, rtol=0)

    def test_oblique_kernel_matches_loops(self):
        rng = np.random.default_rng(2)
        img = rng.random((1, 9, 9))
        kernel = make_linear_kernel(5, 0.6, 5)
        np.testing.assert_allclose(blur_with_kernel(img, kernel), convolve_loops_reflect(img, kernel),
                                   atol=1e-12, rtol=0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), length=st.floats(1, 9), angle=st.sampled_from([0.0, np.pi / 2, np.pi]))
    def test_mean_preserved_for_axis_aligned_motion(self, seed, length, angle):
        img = np.random.default_rng(seed).random((3, 16, 16))
        out = blur_with_kernel(img, make_linear_kernel(length, angle, 9))
        assert out.min() >= 0 and out.max() <= 1 + 1e-12
        assert abs(out.mean() - img.mean()) < 1e-9

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), length=st.floats(1, 9), angle=st.floats(0, 2 * np.pi))
    def test_oblique_mean_drift_confined_to_border(self, seed, length, angle):
        img = np.random.default_rng(seed).random((3, 16, 16))
        kernel = make_linear_kernel(length, angle, 9)
        out = blur_with_kernel(img, kernel)
        assert out.min() >= 0 and out.max() <= 1 + 1e-12
        # interior pixels never see the padding, so they equal an unpadded convolution
        interior = convolve_loops_reflect(img[:1], kernel)[0, 4:-4, 4:-4]
        np.testing.assert_allclose(out[0, 4:-4, 4:-4], interior, atol=1e-12)
        assert abs(out.mean() - img.mean()) < 5e-3

    def test_averaging_single_frame(self):
        f = np.random.default_rng(3).random((3, 4, 4))
        np.testing.assert_array_equal(blur_by_averaging([f]), f)

    def test_averaging_negation(self):
        f = np.random.default_rng(4).random((3, 4, 4))
        np.testing.assert_allclose(blur_by_averaging([f, 1.0 - f]), 0.5, atol=1e-15)

    def test_averaging_spread_grows_with_frames(self):
        step = np.zeros((1, 1, 32))
        step[..., 16:] = 1.0

        def spread(n):
            out = blur_by_averaging([np.roll(step, k, axis=2) for k in range(n)])
            return int(np.sum((out > 0) & (out < 1)))

        widths = [spread(n) for n in (1, 2, 4, 8)]
        assert widths == sorted(widths) and widths[0] < widths[-1]

    def test_averaging_shape_mismatch(self):
        with pytest.raises(DimensionError):
            blur_by_averaging([np.zeros((3, 4, 4)), np.zeros((3, 4, 5))])


class TestNms:
    def test_empty_and_single(self):
        b = BoundingBox(0, 0, 4, 4, 0.5)
        assert nms([]) == [] and nms([b]) == [b]

    def test_identical_keeps_higher(self):
        a, b = BoundingBox(1, 1, 5, 5, 0.9), BoundingBox(1, 1, 5, 5, 0.8)
        assert nms([b, a]) == [a]

    def test_iou_values(self):
        a, b = BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)
        assert iou(a, b) == pytest.approx(2 / 6)
        assert iou(a, BoundingBox(5, 5, 1, 1)) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_exhaustive(self, seed):
        rng = np.random.default_rng(seed)
        boxes = [BoundingBox(int(rng.integers(0, 20)), int(rng.integers(0, 20)), int(rng.integers(3, 12)),
                             int(rng.integers(3, 12)), float(rng.choice([0.3, 0.5, 0.7, 0.9])))
                 for _ in range(10)]
        kept = nms(boxes, 0.5)
        assert kept == nms_exhaustive(boxes, 0.5)
        for a, b in itertools.combinations(kept, 2):
            assert iou(a, b) <= 0.5

    def test_equal_score_tie_by_index(self):
        a, b = BoundingBox(0, 0, 4, 4, 0.5), BoundingBox(0, 1, 4, 4, 0.5)
        assert nms([a, b]) == [a]
        assert nms([b, a]) == [b]

    def test_bad_threshold(self):
        with pytest.raises(ParameterError):
            nms([], 0.0)


class TestImportance:
    W, H = 100, 80

    def test_centered_large_box_dominates(self):
        best = BoundingBox(25, 20, 50, 40, 1.0)
        others = [BoundingBox(0, 0, 50, 40, 1.0), BoundingBox(40, 35, 20, 10, 1.0), BoundingBox(25, 20, 50, 40, 0.6)]
        assert all(box_importance(best, self.W, self.H) > box_importance(o, self.W, self.H) for o in others)

    def test_zero_score_dropped(self):
        box = BoundingBox(25, 20, 50, 40, 0.0)
        assert box_importance(box, self.W, self.H) == 0.0
        assert importance_filter([box], self.W, self.H, min_importance=1e-9) == []

    def test_hand_ranking(self):
        diag = np.hypot(50, 40)

        def hand(x, y, w, h, s):
            cx, cy = x + w / 2, y + h / 2
            cent = max(0.0, 1 - np.hypot(cx - 50, cy - 40) / diag)
            return s * cent * min(1.0, (w * h / 8000) / 0.25)

        specs = [(25, 20, 50, 40, 0.9), (0, 0, 30, 30, 1.0), (60, 50, 40, 30, 0.8), (45, 35, 10, 10, 1.0),
                 (10, 30, 60, 20, 0.5)]
        boxes = [BoundingBox(*s) for s in specs]
        scores = [box_importance(b, self.W, self.H) for b in boxes]
        np.testing.assert_allclose(scores, [hand(*s) for s in specs], rtol=1e-12)
        assert np.argsort(scores).tolist() == np.argsort([hand(*s) for s in specs]).tolist()

    def test_filter_threshold(self):
        boxes = [BoundingBox(25, 20, 50, 40, 1.0), BoundingBox(0, 0, 5, 5, 1.0)]
        assert importance_filter(boxes, self.W, self.H, min_importance=0.1) == boxes[:1]


class TestAlignment:
    def test_planted_offset_example(self):
        rng = np.random.default_rng(0)
        init = BoundingBox(12, 14, 10, 8)
        image = rng.random((3, 40, 40))
        template = rng.random((3, 8, 10))
        image[:, 14 - 2:14 - 2 + 8, 12 + 3:12 + 3 + 10] = template
        res = align_pair(template, image, init)
        assert (res.offset_x, res.offset_y) == (3, -2)
        assert res.psnr == 99.0
        assert res.window(init) == BoundingBox(15, 12, 10, 8)

    def test_self_match(self):
        rng = np.random.default_rng(1)
        image = rng.random((3, 30, 30))
        init = BoundingBox(10, 10, 8, 8)
        res = align_pair(image[:, 10:18, 10:18].copy(), image, init)
        assert (res.offset_x, res.offset_y) == (0, 0)

    def test_fifty_planted_shifts(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            template, image, box, shift = plant_shift(rng)
            res = align_pair(template, image, BoundingBox(*box))
            assert (res.offset_x, res.offset_y) == shift

    def test_psnr_is_grid_maximum(self):
        rng = np.random.default_rng(3)
        init = BoundingBox(6, 5, 6, 5)
        image = rng.random((3, 20, 20))
        template = image[:, 6:11, 7:13] * 0.9 + 0.05
        res = align_pair(template, image, init)
        grid = psnr_scan(template, image, *search_area(init, 20, 20))
        assert res.psnr == pytest.approx(max(grid.values()), abs=1e-9)
        assert grid[(init.x + res.offset_x, init.y + res.offset_y)] == pytest.approx(res.psnr, abs=1e-9)

    def test_tie_prefers_small_offset(self):
        image = np.zeros((1, 20, 20))
        init = BoundingBox(6, 6, 4, 4)
        res = align_pair(np.zeros((1, 4, 4)), image, init)
        assert (res.offset_x, res.offset_y) == (0, 0)

    def test_search_area_too_small(self):
        with pytest.raises(GeometryError):
            align_pair(np.zeros((1, 4, 6)), np.zeros((1, 3, 30)), BoundingBox(0, 0, 6, 4))

    def test_crop_size_mismatch(self):
        with pytest.raises(GeometryError):
            align_pair(np.zeros((1, 4, 4)), np.zeros((1, 20, 20)), BoundingBox(2, 2, 5, 4))

    def test_search_area_clipped(self):
        assert search_area(BoundingBox(2, 3, 10, 8), 15, 15) == (0, 0, 15, 15)
        assert search_area(BoundingBox(10, 10, 4, 6), 50, 50) == (8, 7, 16, 19)


class TestManifest:
    @pytest.fixture
    def manifest(self):
        recs = [ManifestRecord(f"s{k}_{i}.png", f"b{k}_{i}.png", f"scene{k:02d}") for k in range(16) for i in range(3)]
        return DatasetManifest(recs)

    def test_partition_ten_six(self, manifest):
        train = random_train_scenarios(manifest.scenarios, 10, seed=0)
        out = split_by_scenario(manifest, train)
        assert len(out.split("train")) == 30 and len(out.split("test")) == 18
        assert len(out.split("train")) + len(out.split("test")) == len(manifest)
        out.verify()

    def test_all_but_one(self, manifest):
        out = split_by_scenario(manifest, manifest.scenarios[:-1])
        assert {r.scenario_id for r in out.split("test")} == {manifest.scenarios[-1]}

    def test_unknown_scenario(self, manifest):
        with pytest.raises(DataError):
            split_by_scenario(manifest, ["nowhere"])

    def test_must_be_proper_subset(self, manifest):
        with pytest.raises(DataError):
            split_by_scenario(manifest, manifest.scenarios)
        with pytest.raises(DataError):
            split_by_scenario(manifest, [])

    def test_verify_rejects_overlap(self):
        bad = DatasetManifest([ManifestRecord("a", "b", "x", "train"), ManifestRecord("c", "d", "x", "test")])
        with pytest.raises(DataError):
            bad.verify()

    def test_round_trip(self, manifest, tmp_path):
        out = split_by_scenario(manifest, manifest.scenarios[:4])
        out.write(tmp_path / "m.jsonl")
        back = DatasetManifest.read(tmp_path / "m.jsonl")
        assert back.records == out.records

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"sharp_path": "a"}\n')
        with pytest.raises(DataError):
            DatasetManifest.read(tmp_path / "m.jsonl")

    def test_random_split_reproducible(self, manifest):
        assert random_train_scenarios(manifest.scenarios, 10, 7) == random_train_scenarios(manifest.scenarios, 10, 7)


class TestBoxesSidecar:
    def test_read(self, tmp_path):
        path = tmp_path / "boxes.jsonl"
        path.write_text("\n".join(json.dumps(d) for d in [
            {"image": "a.png", "x": 1, "y": 2, "w": 3, "h": 4, "score": 0.5},
            {"image": "a.png", "x": 5, "y": 6, "w": 7, "h": 8, "score": 0.9},
        ]) + "\n")
        boxes = read_boxes(path)
        assert boxes == {"a.png": [BoundingBox(1, 2, 3, 4, 0.5), BoundingBox(5, 6, 7, 8, 0.9)]}

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            read_boxes(tmp_path / "none.jsonl")

    def test_malformed(self, tmp_path):
        (tmp_path / "b.jsonl").write_text('{"image": "a.png", "x": 1}\n')
        with pytest.raises(DataError):
            read_boxes(tmp_path / "b.jsonl")
