import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpplab import InvalidArgument
from fpplab.evaluation import (ABLATION_CONFIGS, ABLATION_FIELDS, depth_point_cloud, depth_rmse,
                               evaluate_orders, fit_sphere, fringe_order_accuracy, mftpu_metrics,
                               order_variance_ratio, preprocess_mask, run_ablation, write_metrics_csv)
from fpplab.nn.network import NetworkConfig
from fpplab.nn.train import Schedule


class TestMask:
    def test_uniform(self):
        assert preprocess_mask(np.full((32, 32), 100.0)).all()

    def test_isolated_pixel_removed(self):
        b = np.zeros((32, 32))
        b[10, 10] = 100.0
        assert not preprocess_mask(b).any()

    def test_small_component_removed(self):
        b = np.zeros((64, 64))
        b[5:10, 5:9] = 100.0  # 20 px = 0.49% of 4096
        b[30:37, 30:37] = 100.0  # 49 px = 1.2%
        m = preprocess_mask(b)
        assert not m[5:10, 5:9].any() and m[30:37, 30:37].all() and m.sum() == 49

    def test_threshold(self):
        b = np.full((16, 16), 3.99)
        assert not preprocess_mask(b).any()
        assert preprocess_mask(np.full((16, 16), 4.0)).all()
        with pytest.raises(InvalidArgument):
            preprocess_mask(b, threshold=-1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0, 50), st.floats(0, 50))
    def test_threshold_stage_monotone(self, seed, t1, t2):
        lo, hi = sorted((t1, t2))
        b = np.random.default_rng(seed).uniform(0, 60, (12, 12))
        assert not np.any((b >= hi) & ~(b >= lo))
        m_lo = preprocess_mask(b, lo, 0.0)
        m_hi = preprocess_mask(b, hi, 0.0)
        assert not np.any(m_hi & ~m_lo)


class TestMetrics:
    def test_rmse_examples(self, rng):
        t = rng.normal(size=(8, 8))
        m = np.ones((8, 8), bool)
        assert depth_rmse(t, t, m) == 0.0
        assert abs(depth_rmse(t + 0.1, t, m) - 0.1) < 1e-12

    def test_rmse_translation(self, rng):
        p, t = rng.normal(size=(2, 8, 8))
        m = rng.random((8, 8)) > 0.3
        assert abs(depth_rmse(p + 3.3, t + 3.3, m) - depth_rmse(p, t, m)) < 1e-12

    def test_rmse_valid_range(self):
        t = np.array([[0.0, 100.0]])
        p = np.array([[1.0, 0.0]])
        assert depth_rmse(p, t, np.ones((1, 2), bool)) == 1.0
        with pytest.raises(InvalidArgument):
            depth_rmse(p, t, np.ones((1, 2), bool), valid_range=(1, 0))
        with pytest.raises(InvalidArgument):
            depth_rmse(p, t, np.zeros((1, 2), bool))

    def test_rmse_gross_threshold(self):
        t = np.zeros((1, 3))
        p = np.array([[0.1, -0.1, 5.0]])
        m = np.ones((1, 3), bool)
        assert abs(depth_rmse(p, t, m, gross_threshold=1.0) - 0.1) < 1e-12

    def test_order_accuracy(self, rng):
        k = rng.integers(0, 16, (6, 6)).astype(float)
        m = np.ones((6, 6), bool)
        assert fringe_order_accuracy(k, k, m) == 1.0
        assert fringe_order_accuracy(k + 1, k, m) == 0.0
        with pytest.raises(InvalidArgument):
            fringe_order_accuracy(k, k, np.zeros((6, 6), bool))

    def test_mftpu_noiseless_exact(self, toy_samples, desk_geom):
        for s in toy_samples:
            assert fringe_order_accuracy(np.asarray(s.gt_order), s.gt_order, s.mask) == 1.0
        m = mftpu_metrics(toy_samples, desk_geom)
        assert m["order_accuracy"] == 1.0 and m["depth_rmse"] < 1e-9

    def test_variance_ratio(self):
        t = np.array([[0.0, 1.0, 2.0, 3.0]])
        m = np.ones((1, 4), bool)
        assert order_variance_ratio(t, t, m) == 1.0
        assert order_variance_ratio(np.full((1, 4), 2.0), t, m) == 0.0
        with pytest.raises(InvalidArgument):
            order_variance_ratio(t, np.ones((1, 4)), m)

    def test_evaluate_orders_wrong_order(self, toy_samples, desk_geom):
        s = toy_samples[0]
        k = s.gt_order.copy()
        k[s.mask] += 1
        out = evaluate_orders([k], [s], desk_geom)
        assert out["order_accuracy"] == 0.0
        assert abs(out["depth_rmse"] - desk_geom.depth_per_fringe()) < 1e-6
        assert np.isnan(out["depth_rmse_clipped"])
        with pytest.raises(InvalidArgument):
            evaluate_orders([], [], desk_geom)


class TestSphere:
    def test_exact_axis_points(self):
        pts = [(5, 0, 0), (-5, 0, 0), (0, 5, 0), (0, -5, 0), (0, 0, 5)]
        fit = fit_sphere(pts)
        assert abs(fit.diameter - 10) < 1e-12 and fit.rms_residual < 1e-12
        np.testing.assert_allclose(fit.center, 0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_random(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-100, 100, 3)
        r = rng.uniform(0.1, 50)
        d = rng.normal(size=(12, 3))
        pts = c + r * d / np.linalg.norm(d, axis=1, keepdims=True)
        fit = fit_sphere(pts)
        assert abs(fit.diameter - 2 * r) < 1e-9 and fit.rms_residual < 1e-9

    def test_synthetic_hemisphere_cloud(self):
        r = 5.00625
        yy, xx = np.mgrid[0:101, 0:101] * 0.1 - 5.0
        z = np.sqrt(np.clip(r ** 2 - xx ** 2 - yy ** 2, 0, None))
        inside = xx ** 2 + yy ** 2 < (0.9 * r) ** 2
        fit = fit_sphere(np.column_stack([xx[inside], yy[inside], z[inside]]))
        assert abs(fit.diameter - 10.0125) < 1e-6

    def test_too_few_points(self):
        with pytest.raises(InvalidArgument):
            fit_sphere([(1, 0, 0), (0, 1, 0), (0, 0, 1)])

    def test_coplanar(self):
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.normal(size=(10, 2)), np.zeros(10)])
        with pytest.raises(InvalidArgument):
            fit_sphere(pts)

    def test_point_cloud(self):
        depth = np.array([[1.0, 2.0], [3.0, 4.0]])
        mask = np.array([[True, False], [False, True]])
        np.testing.assert_allclose(depth_point_cloud(depth, mask, 0.5), [[0, 0, 1], [0.5, 0.5, 4]])


class TestAblationHarness:
    def test_rows_and_csv(self, toy_samples, desk_geom, tmp_path):
        train = [s for s in toy_samples if s.split == "train"]
        test = [s for s in toy_samples if s.split == "val"]
        net = NetworkConfig(channels=(4, 8, 8), head_channels=0)
        rows, orders = run_ablation(train, test, desk_geom, net_config=net,
                                    schedule=Schedule(stage1_epochs=1, stage2_epochs=1),
                                    out_csv=tmp_path / "t.csv", return_orders=True)
        assert [r["ID"] for r in rows] == ["#1", "#2", "#3", "#4", "#5", "#6"]
        assert set(orders) == {c.id for c in ABLATION_CONFIGS} and len(orders["#6"]) == len(test)
        with open(tmp_path / "t.csv") as fh:
            read = list(csv.DictReader(fh))
        assert tuple(read[0]) == ABLATION_FIELDS and len(read) == 6

    def test_needs_test_set(self, toy_samples, desk_geom):
        with pytest.raises(InvalidArgument):
            run_ablation(toy_samples, [], desk_geom)

    def test_configs_match_table(self):
        by_id = {c.id: c for c in ABLATION_CONFIGS}
        assert [by_id[i].in_channels for i in ("#1", "#2", "#3", "#4", "#5", "#6")] == [1, 1, 2, 2, 2, 1]
        assert by_id["#6"].stage1_weights == (1.0, 0.0) and by_id["#6"].stage2_weights == (1.0, 2.0)
        assert by_id["#2"].stage1_weights[0] == 0 and by_id["#4"].stage2_weights[0] == 0


def test_write_metrics_csv_ignores_extras(tmp_path):
    write_metrics_csv(tmp_path / "m.csv", [{"a": 0.1, "b": 2, "extra": [1]}], ["a", "b"])
    assert (tmp_path / "m.csv").read_text() == "a,b\n0.1,2\n"
    with pytest.raises(InvalidArgument):
        write_metrics_csv(tmp_path / "n.csv", [])
