import numpy as np
import pytest

from opforecast import evaluate as ev
from opforecast import models
from opforecast.data import NormStats, SnapshotSeries
from opforecast.evaluate import (
    EvalError,
    persistence_baseline,
    render_field,
    rmse_per_lead,
    rollout,
    skill_vs_variability,
    write_report,
)


def series_from(data, dt=1.0, mask=None):
    return SnapshotSeries(np.asarray(data, dtype=float), dt, ("m/s", "m/s"), mask)


def random_series(n=6, h=4, w=5, seed=0, mask=None):
    rng = np.random.default_rng(seed)
    return series_from(rng.standard_normal((n, 2, h, w)), mask=mask)


class TestRollout:
    def zero_model(self):
        params = models.init_fcn(np.random.default_rng(0), 8, 8, 2, 8, 1, n_blocks=2)
        params.head_w[...] = 0.0
        params.head_b[...] = 0.0
        return params

    def test_n_zero_is_just_x0(self):
        x0 = np.random.default_rng(1).standard_normal((2, 8, 8))
        result = rollout(self.zero_model(), x0, 0)
        assert result.series.n == 1
        assert np.array_equal(result.series.data[0], x0)
        assert not result.truncated

    def test_constant_model_with_stats(self):
        """A zero-output model in normalized space forecasts the mean field."""
        stats = NormStats(np.array([1.5, -2.0]), np.array([2.0, 3.0]), 0)
        x0 = np.random.default_rng(2).standard_normal((2, 8, 8))
        result = rollout(self.zero_model(), x0, 3, stats=stats)
        assert result.series.n == 4
        for k in (1, 2, 3):
            assert np.allclose(result.series.data[k, 0], 1.5)
            assert np.allclose(result.series.data[k, 1], -2.0)

    def test_nan_truncates_and_flags(self):
        params = self.zero_model()
        params.head_b[...] = np.nan
        x0 = np.zeros((2, 8, 8))
        result = rollout(params, x0, 5)
        assert result.truncated
        assert result.series.n == 1  # only x0 survived

    def test_mask_kept_zero(self):
        mask = np.random.default_rng(3).random((8, 8)) > 0.4
        params = models.init_fcn(np.random.default_rng(4), 8, 8, 2, 8, 1, n_blocks=2)
        x0 = np.random.default_rng(5).standard_normal((2, 8, 8))
        result = rollout(params, x0, 3, mask=mask)
        assert np.all(result.series.data[:, :, ~mask] == 0.0)


class TestRMSEPerLead:
    def test_identical_series_zero(self):
        truth = random_series()
        report = rmse_per_lead(truth, truth)
        assert np.all(report.rmse == 0.0)
        assert np.all(report.rmse_pooled == 0.0)

    def test_constant_offset(self):
        truth = random_series(seed=1)
        pred = series_from(truth.data + 0.7)
        report = rmse_per_lead(pred, truth)
        assert np.allclose(report.rmse, 0.7, atol=1e-12)
        assert np.allclose(report.rmse_pooled, 0.7, atol=1e-12)

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        mask = rng.random((4, 5)) > 0.3
        truth = random_series(seed=3, mask=mask)
        pred = random_series(seed=4, mask=mask)
        report = rmse_per_lead(pred, truth, mask)
        for ell in range(truth.n):
            for c in range(2):
                total, count = 0.0, 0
                for i in range(4):
                    for j in range(5):
                        if mask[i, j]:
                            d = pred.data[ell, c, i, j] - truth.data[ell, c, i, j]
                            total += d * d
                            count += 1
                assert report.rmse[ell, c] == pytest.approx(
                    np.sqrt(total / count), abs=1e-12
                )

    def test_misalignment_names_both_axes(self):
        a = random_series(n=6)
        b = random_series(n=5)
        with pytest.raises(EvalError, match="pred axis.*truth axis"):
            rmse_per_lead(a, b)

    def test_lead_zero_zero_when_initialized_from_truth(self):
        truth = random_series(seed=5)
        pred_data = truth.data.copy()
        pred_data[1:] += 0.3
        report = rmse_per_lead(series_from(pred_data), truth)
        assert np.all(report.rmse[0] == 0.0)

    def test_triangle_inequality(self):
        a, b, c = (random_series(seed=s) for s in (6, 7, 8))
        r_ac = rmse_per_lead(a, c).rmse
        r_ab = rmse_per_lead(a, b).rmse
        r_bc = rmse_per_lead(b, c).rmse
        assert np.all(r_ac <= r_ab + r_bc + 1e-12)

    def test_land_cells_never_reported(self):
        mask = np.random.default_rng(9).random((4, 5)) > 0.4
        truth = random_series(seed=10, mask=mask)
        pred = random_series(seed=11, mask=mask)
        base = rmse_per_lead(pred, truth, mask)
        poisoned_truth = series_from(truth.data.copy(), mask=None)
        poisoned_truth.data[:, :, ~mask] += 42.0
        poisoned_pred = series_from(pred.data.copy(), mask=None)
        poisoned_pred.data[:, :, ~mask] -= 17.0
        report = rmse_per_lead(poisoned_pred, poisoned_truth, mask)
        assert np.array_equal(report.rmse, base.rmse)
        assert np.array_equal(report.baseline_rmse, base.baseline_rmse)
        assert np.array_equal(report.field_variability, base.field_variability)


class TestBaseline:
    def test_constant_truth_zero_baseline(self):
        data = np.tile(np.random.default_rng(12).standard_normal((1, 2, 4, 5)), (6, 1, 1, 1))
        truth = series_from(data)
        curve = persistence_baseline(data[0], truth)
        assert np.all(curve == 0.0)

    def test_linear_ramp(self):
        x0 = np.random.default_rng(13).standard_normal((2, 4, 5))
        c = 0.2
        data = np.stack([x0 + c * ell for ell in range(5)])
        curve = persistence_baseline(x0, series_from(data))
        assert np.allclose(curve, c * np.arange(5)[:, None], atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(EvalError):
            persistence_baseline(np.zeros((2, 3, 3)), random_series())


class TestSkill:
    def test_ratio_definition(self):
        truth = random_series(seed=14)
        pred = series_from(truth.data + 0.3 * truth.data.std(axis=(0, 2, 3))[None, :, None, None])
        report = rmse_per_lead(pred, truth)
        ratio = skill_vs_variability(report)
        assert np.allclose(ratio, 0.3, atol=1e-12)

    def test_zero_rmse_zero_ratio(self):
        truth = random_series(seed=15)
        ratio = skill_vs_variability(rmse_per_lead(truth, truth))
        assert np.all(ratio == 0.0)

    def test_zero_variability_rejected(self):
        truth = series_from(np.zeros((4, 2, 3, 3)))
        report = rmse_per_lead(truth, truth)
        with pytest.raises(EvalError):
            skill_vs_variability(report)


class TestReportCSV:
    def test_csv_round_shape(self, tmp_path):
        mask = np.random.default_rng(16).random((4, 5)) > 0.3
        truth = random_series(seed=17, mask=mask)
        pred = random_series(seed=18, mask=mask)
        report = rmse_per_lead(pred, truth, mask)
        path = tmp_path / "report.csv"
        write_report(path, report)
        lines = path.read_text().strip().split("\n")
        assert lines[0].split(",") == [
            "lead_step", "lead_physical", "rmse_u", "rmse_v", "rmse_pooled",
            "baseline_u", "baseline_v", "ratio_u", "ratio_v",
        ]
        assert len(lines) == truth.n + 1
        first = lines[1].split(",")
        assert first[0] == "0"
        assert float(first[2]) == pytest.approx(report.rmse[0, 0], rel=1e-10)

    def test_hours_for_slow_sampling(self, tmp_path):
        truth = random_series(seed=19)
        truth = series_from(truth.data, dt=3600.0)
        pred = series_from(random_series(seed=20).data, dt=3600.0)
        report = rmse_per_lead(pred, truth)
        path = tmp_path / "report.csv"
        write_report(path, report)
        rows = path.read_text().strip().split("\n")[1:]
        assert float(rows[1].split(",")[1]) == pytest.approx(1.0)  # one hour


class TestRender:
    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(21)
        snap = rng.standard_normal((2, 6, 7))
        mask = rng.random((6, 7)) > 0.3
        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        render_field(snap, mask, p1)
        render_field(snap, mask, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_and_size(self, tmp_path):
        snap = np.zeros((2, 6, 7))
        path = tmp_path / "z.ppm"
        render_field(snap, None, path)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n7 6\n255\n")
        assert len(raw) == len(b"P6\n7 6\n255\n") + 6 * 7 * 3

    def test_zero_field_uniform_lowest_color_with_land(self, tmp_path):
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        path = tmp_path / "zero.ppm"
        render_field(np.zeros((2, 4, 4)), mask, path)
        raw = path.read_bytes()
        pixels = np.frombuffer(raw.split(b"255\n", 1)[1], dtype=np.uint8).reshape(4, 4, 3)
        assert tuple(pixels[0, 0]) == ev.LAND_COLOR
        low = tuple(ev._ANCHORS[0].astype(int))
        assert all(tuple(pixels[i, j]) == low for i in range(4) for j in range(4)
                   if mask[i, j])

    def test_error_field_compositionality(self, tmp_path):
        rng = np.random.default_rng(22)
        pred = rng.standard_normal((2, 5, 5))
        truth = rng.standard_normal((2, 5, 5))
        p1, p2 = tmp_path / "d1.ppm", tmp_path / "d2.ppm"
        diff = pred - truth
        render_field(pred - truth, None, p1)
        render_field(diff, None, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_nonfinite_rejected(self, tmp_path):
        snap = np.zeros((2, 3, 3))
        snap[0, 0, 0] = np.inf
        with pytest.raises(EvalError):
            render_field(snap, None, tmp_path / "x.ppm")
