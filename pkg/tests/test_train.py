import numpy as np
import pytest

from opforecast import models, train
from opforecast.data import SnapshotSeries, SplitSpec, split
from opforecast.tensor import ShapeError
from opforecast.train import (
    OptimizerState,
    TrainConfig,
    TrainError,
    adam_step,
    l2_loss,
    train_autoencoder,
    train_fcn,
    train_ldon,
)


class TestL2Loss:
    def test_equal_is_zero(self):
        x = np.random.default_rng(0).standard_normal((3, 2, 4, 4))
        assert l2_loss(x, x) == 0.0

    def test_constant_offset(self):
        x = np.random.default_rng(1).standard_normal((3, 2, 4, 4))
        assert l2_loss(x + 0.5, x) == pytest.approx(0.25, abs=1e-14)

    def test_land_perturbation_invisible(self):
        rng = np.random.default_rng(2)
        mask = rng.random((4, 5)) > 0.4
        pred = rng.standard_normal((3, 2, 4, 5))
        target = rng.standard_normal((3, 2, 4, 5))
        base = l2_loss(pred, target, mask)
        target2 = target.copy()
        target2[:, :, ~mask] += 100.0
        assert l2_loss(pred, target2, mask) == base  # bit-identical

    def test_masked_matches_manual(self):
        rng = np.random.default_rng(3)
        mask = rng.random((4, 5)) > 0.4
        pred = rng.standard_normal((3, 2, 4, 5))
        target = rng.standard_normal((3, 2, 4, 5))
        manual = np.mean((pred - target)[:, :, mask] ** 2)
        assert l2_loss(pred, target, mask) == pytest.approx(manual, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l2_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_taped_matches_numpy(self):
        from opforecast import autodiff as ad

        rng = np.random.default_rng(4)
        mask = rng.random((4, 5)) > 0.4
        pred = rng.standard_normal((3, 2, 4, 5))
        target = rng.standard_normal((3, 2, 4, 5))
        tape = ad.Tape()
        taped = l2_loss(tape.variable(pred), target, mask)
        assert float(taped.value) == pytest.approx(
            l2_loss(pred, target, mask), rel=1e-14
        )


class TestAdam:
    def cfg(self, **kw):
        kw.setdefault("epochs", 1)
        kw.setdefault("clip_norm", 0.0)
        return TrainConfig(**kw)

    def test_zero_gradient_no_change(self):
        p = np.ones((3,))
        before = p.copy()
        adam_step([("w", p)], {"w": np.zeros(3)}, OptimizerState(), self.cfg())
        assert np.array_equal(p, before)

    def test_first_step_magnitude(self):
        p = np.zeros((4,))
        g = np.full(4, 7.3)
        cfg = self.cfg(learning_rate=1e-3)
        adam_step([("w", p)], {"w": g}, OptimizerState(), cfg)
        # bias-corrected first step: -lr * g/|g| (up to eps)
        assert np.allclose(p, -1e-3, rtol=1e-6)

    def test_quadratic_descent(self):
        p = np.array([1.0, 1.0])
        opt = OptimizerState()
        cfg = self.cfg(learning_rate=0.05)
        norms = [np.linalg.norm(p)]
        for _ in range(20):
            adam_step([("w", p)], {"w": 2 * p}, opt, cfg)
            norms.append(np.linalg.norm(p))
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_nonfinite_gradient_named(self):
        p = np.ones(2)
        with pytest.raises(TrainError, match="mlp_w1"):
            adam_step(
                [("mlp_w1", p)],
                {"mlp_w1": np.array([1.0, np.nan])},
                OptimizerState(),
                self.cfg(),
            )

    def test_clipping_bounds_update(self):
        cfg = TrainConfig(epochs=1, clip_norm=1.0, learning_rate=1.0)
        p = np.zeros(3)
        g = np.full(3, 100.0)
        opt = OptimizerState()
        adam_step([("w", p)], {"w": g}, opt, cfg)
        clipped = opt.v["w"] * 1000  # second moment built from clipped grads
        assert np.all(np.sqrt(opt.v["w"] / (1 - 0.999)) <= 1.0 + 1e-9)


def fpc_like_series(n, h=8, w=8, seed=0):
    """Small traveling-wave series standing in for the flow data."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)[:, None, None]
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    u = np.sin(2 * np.pi * (xx[None] / w - t / 10.0)) + 0.05 * rng.standard_normal(
        (n, h, w)
    )
    v = np.cos(2 * np.pi * (yy[None] / h - t / 10.0)) + 0.05 * rng.standard_normal(
        (n, h, w)
    )
    return SnapshotSeries(np.stack([u, v], axis=1), 0.01, ("m/s", "m/s"))


class TestTrainFCN:
    def small(self):
        rng = np.random.default_rng(5)
        return models.init_fcn(rng, 8, 8, 2, 16, 1, n_blocks=2)

    def test_step_count_one_epoch(self):
        series = fpc_like_series(10)
        train_split, val_split, _ = split(series, SplitSpec(10, 0, 0))
        # 9 pairs, batch 2 -> 4 optimizer steps
        calls = []
        orig = train.adam_step

        def counting(*a, **k):
            calls.append(1)
            return orig(*a, **k)

        train.adam_step = counting
        try:
            params = self.small()
            train_fcn(params, train_split, train_split, TrainConfig(epochs=1))
        finally:
            train.adam_step = orig
        assert len(calls) == 4

    def test_loss_decreases(self):
        series = fpc_like_series(40)
        train_split, val_split, _ = split(series, SplitSpec(30, 10, 0))
        params = self.small()
        result = train_fcn(
            params,
            train_split,
            val_split,
            TrainConfig(epochs=15, batch_size=4, learning_rate=2e-3, seed=1),
        )
        assert result.train_losses[-1] < 0.5 * result.train_losses[0]

    def test_rerun_bit_identical(self, tmp_path):
        series = fpc_like_series(20)
        train_split, val_split, _ = split(series, SplitSpec(15, 5, 0))
        cfg = TrainConfig(epochs=3, batch_size=2, seed=9)
        outs = []
        for run in range(2):
            params = self.small()
            path = tmp_path / f"run{run}.opfc"
            train_fcn(params, train_split, val_split, cfg, checkpoint_path=path)
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_best_checkpoint_persisted(self, tmp_path):
        series = fpc_like_series(20)
        train_split, val_split, _ = split(series, SplitSpec(15, 5, 0))
        path = tmp_path / "best.opfc"
        params = self.small()
        train_fcn(params, train_split, val_split, TrainConfig(epochs=2), path)
        loaded = models.load_fcn(path)
        assert loaded.embed_dim == params.embed_dim

    def test_masked_land_gradients_invariant(self):
        """Perturbing land cells of targets leaves parameters bit-identical."""
        rng = np.random.default_rng(6)
        mask = rng.random((8, 8)) > 0.3
        base = fpc_like_series(12, seed=7)
        runs = []
        for poison in (False, True):
            data = base.data.copy()
            series = SnapshotSeries(data, 0.01, ("m/s", "m/s"), mask)
            if poison:
                # targets see this only through the masked loss
                series.data[:, :, ~mask] = 0.0  # ingestion zero-fill (same)
            train_split, val_split, _ = split(series, SplitSpec(9, 3, 0))
            params = models.init_fcn(np.random.default_rng(8), 8, 8, 2, 16, 1,
                                     n_blocks=2)
            train_fcn(params, train_split, val_split, TrainConfig(epochs=2))
            runs.append(np.concatenate([a.ravel() for _, a in params.tensors()]))
        assert np.array_equal(runs[0], runs[1])


class TestTrainLDON:
    def test_autoencoder_reduces_reconstruction(self):
        series = fpc_like_series(30, seed=10)
        train_split, val_split, _ = split(series, SplitSpec(24, 6, 0))
        ae = models.init_autoencoder(
            np.random.default_rng(11), 2 * 8 * 8, 8, [32]
        )
        x = train_split.data.reshape(24, -1)
        _, recon0 = models.autoencoder_roundtrip(ae, x)
        initial = float(np.mean((recon0 - x) ** 2))
        train_autoencoder(
            ae, train_split, val_split,
            TrainConfig(epochs=40, batch_size=8, learning_rate=2e-3),
        )
        _, recon1 = models.autoencoder_roundtrip(ae, x)
        final = float(np.mean((recon1 - x) ** 2))
        assert final < initial / 5.0

    def test_ldon_curriculum_trains(self):
        series = fpc_like_series(30, seed=12)
        train_split, val_split, _ = split(series, SplitSpec(24, 6, 0))
        model = models.init_latent_deeponet(
            np.random.default_rng(13), 2, 8, 8, latent_dim=4, p=4,
            branch_hidden=[16], trunk_hidden=[16], ae_hidden=[32],
        )
        ae_res, don_res = train_ldon(
            model, train_split, val_split,
            TrainConfig(epochs=15, batch_size=4, learning_rate=2e-3),
            horizon=5,
        )
        assert don_res.train_losses[-1] < don_res.train_losses[0]
        forecast = models.latent_deeponet_forecast(
            model.don, model.ae, train_split.data[0], 5
        )
        assert forecast.shape == (5, 2, 8, 8)
