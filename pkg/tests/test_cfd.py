import numpy as np
import pytest

from opforecast import cfd
from opforecast.cfd import (
    CFLError,
    FlowConfig,
    NoSheddingError,
    initial_state,
    reynolds,
    shedding_period,
    simulate,
    snapshot_count,
    step,
)


def no_cylinder(**kw):
    kw.setdefault("cylinder_diameter", 0.0)
    kw.setdefault("perturb_frac", 0.0)
    kw.setdefault("t_end", 1.0)
    return FlowConfig(**kw)


class TestConfig:
    def test_reynolds_default_config(self):
        assert reynolds(FlowConfig()) == pytest.approx(200.0)

    def test_cfl_rejected(self):
        cfg = FlowConfig(dt=0.05, sample_every=0.05)  # CFL = 2*0.05/0.06 = 1.67
        with pytest.raises(CFLError):
            cfg.validate()

    def test_sampling_must_divide(self):
        cfg = FlowConfig(dt=0.003)
        with pytest.raises(ValueError, match="integer multiple"):
            cfg.validate()


class TestStep:
    def test_uniform_flow_stays_uniform(self):
        cfg = no_cylinder()
        s = initial_state(cfg)
        for _ in range(25):
            s = step(s, cfg)
        assert np.abs(s.u - cfg.inlet_speed).max() == 0.0
        assert np.abs(s.v).max() == 0.0
        div = (s.u[:, 1:] - s.u[:, :-1]) / cfg.dx + (s.v[1:] - s.v[:-1]) / cfg.dy
        assert np.abs(div).max() == 0.0

    def test_flux_balance_uniform(self):
        cfg = no_cylinder()
        s = initial_state(cfg)
        for _ in range(10):
            s = step(s, cfg)
        q_in = s.u[:, 0].sum() * cfg.dy
        q_out = s.u[:, -1].sum() * cfg.dy
        assert abs(q_in - q_out) <= 1e-10

    def test_diffusion_decay_matches_heat_equation(self):
        """A cross-stream cosine u-profile (a Neumann Laplacian eigenmode)
        must decay by exp(-nu k^2 dt) within 2% per step."""
        cfg = no_cylinder(inlet_speed=0.0)
        s = initial_state(cfg)
        m = 2
        k = m * np.pi / cfg.domain_height
        yc = (np.arange(cfg.ny) + 0.5) * cfg.dy
        s.u[:] = 0.1 * np.cos(k * yc)[:, None]
        mode = np.cos(k * yc)
        col = cfg.nx // 2  # mid-domain, away from the inlet column
        amp0 = float(s.u[:, col] @ mode) / float(mode @ mode)
        s = step(s, cfg)
        amp1 = float(s.u[:, col] @ mode) / float(mode @ mode)
        expected = np.exp(-cfg.viscosity * k**2 * cfg.dt)
        assert amp1 / amp0 == pytest.approx(expected, rel=0.02)

    def test_advection_is_tvd(self):
        """Advecting a monotone step profile creates no new extrema."""
        n = 64
        h, dt, w = 1.0, 0.4, 1.0
        q = np.where(np.arange(n) < n // 2, 1.0, 0.0)
        for _ in range(50):
            qpad = np.concatenate([q[:2][::-1] * 0 + q[0], q, [q[-1], q[-1]]])
            faces = np.full(n + 1, w)
            q = q + dt * cfd._flux_tendency(qpad[None], faces[None], h, dt)[0]
            assert q.max() <= 1.0 + 1e-12
            assert q.min() >= -1e-12
        # the step must actually move downstream
        assert q[n // 2 :].sum() > 10.0

    def test_symmetric_flow_stays_symmetric(self):
        """Without the inlet perturbation the solver injects no asymmetry
        beyond round-off over a short horizon."""
        cfg = FlowConfig(perturb_frac=0.0, cylinder_center=(5.0, 1.5))
        s = initial_state(cfg)
        for _ in range(100):
            s = step(s, cfg)
        asym_u = np.abs(s.u - s.u[::-1]).max()
        asym_v = np.abs(s.v + s.v[::-1]).max()
        assert asym_u <= 1e-9
        assert asym_v <= 1e-9

    def test_divergence_small_with_cylinder(self):
        cfg = FlowConfig()
        s = initial_state(cfg)
        for _ in range(20):
            s = step(s, cfg)  # raises DivergenceError if the invariant breaks
        div = (s.u[:, 1:] - s.u[:, :-1]) / cfg.dx + (s.v[1:] - s.v[:-1]) / cfg.dy
        div[s.solid_mask] = 0.0
        norm = np.abs(div).max() * min(cfg.dx, cfg.dy) / cfg.inlet_speed
        assert norm <= 1e-8


class TestPoisson:
    def test_matches_direct_solve(self):
        cfg = FlowConfig()
        solid = cfd._solid_mask(cfg)
        op = cfd._PoissonOperator(cfg, solid)
        rng = np.random.default_rng(0)
        b = rng.standard_normal((cfg.ny, cfg.nx))
        b[solid] = 0.0
        x = op.solve(b)
        import scipy.sparse.linalg as spla

        direct = spla.spsolve(op.matrix.tocsc(), b.ravel()).reshape(cfg.ny, cfg.nx)
        assert np.allclose(x, direct, atol=1e-9)

    def test_zero_rhs(self):
        cfg = FlowConfig()
        op = cfd._PoissonOperator(cfg, cfd._solid_mask(cfg))
        assert np.array_equal(op.solve(np.zeros((cfg.ny, cfg.nx))), np.zeros((50, 100)))


class TestSampling:
    def test_full_run_yields_45000(self):
        cfg = FlowConfig(t_end=500.0)
        assert snapshot_count(cfg) == 45_000

    def test_all_discarded(self):
        cfg = FlowConfig(t_end=50.0)
        assert snapshot_count(cfg) == 0

    def test_one_second_past_discard(self):
        cfg = FlowConfig(t_end=51.0)
        assert snapshot_count(cfg) == 100

    def test_simulate_short(self):
        cfg = no_cylinder(t_end=0.3, discard_before=0.1, sample_every=0.1)
        series = simulate(cfg)
        assert series.data.shape == (2, 2, 50, 100)
        assert series.dt_sample == pytest.approx(0.1)
        assert np.allclose(series.data[:, 0], cfg.inlet_speed)
        assert np.allclose(series.data[:, 1], 0.0)


class TestSheddingPeriod:
    def test_pure_sine(self):
        t = np.arange(0, 40, 0.01)
        period = shedding_period(np.sin(2 * np.pi * t / 4.0), 0.01)
        bin_width = 4.0**2 / 40.0  # one frequency bin at the 4 s peak
        assert abs(period - 4.0) <= bin_width

    def test_fundamental_beats_weak_harmonic(self):
        t = np.arange(0, 40, 0.01)
        probe = np.sin(2 * np.pi * t / 4.0) + 0.3 * np.sin(2 * np.pi * t / 2.0)
        assert shedding_period(probe, 0.01) == pytest.approx(4.0, rel=0.11)

    def test_flat_series_rejected(self):
        with pytest.raises(NoSheddingError):
            shedding_period(np.ones(4000), 0.01)

    def test_noise_rejected(self):
        rng = np.random.default_rng(1)
        with pytest.raises(NoSheddingError):
            shedding_period(rng.standard_normal(4000), 0.01)
