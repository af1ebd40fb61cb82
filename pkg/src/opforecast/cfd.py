"""2D incompressible Navier-Stokes finite-volume solver (flow past a cylinder).

Staggered MAC grid: ``u`` lives on vertical cell faces ``(ny, nx+1)``,
``v`` on horizontal faces ``(ny+1, nx)``, pressure at cell centers
``(ny, nx)``. Time stepping is a rotational incremental pressure-correction
scheme: TVD advection with the monotonized-central (MC) limiter and explicit
central-difference diffusion build a provisional velocity, a pressure-Poisson
solve projects it to a divergence-free field, and the pressure update keeps
the rotational correction term.

Boundary conditions: uniform Dirichlet inlet on the left, zero-gradient
outflow with a global flux correction on the right, free-slip top and bottom
walls. The cylinder is a stair-step mask of solid cells with no-slip enforced
on masked faces. Symmetry is broken by a 1% cross-stream inlet component
during the first second of simulated time (configurable).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fft as _fft
from .data import SnapshotSeries


class CFLError(ValueError):
    """Time step violates the advective CFL precondition."""

    category = "cfl"


class PoissonError(RuntimeError):
    """Pressure-Poisson iteration failed to converge."""

    category = "poisson"

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


class DivergenceError(RuntimeError):
    """Post-projection divergence above the solver tolerance."""

    category = "divergence"


class NoSheddingError(RuntimeError):
    """Probe series has no spectral peak above the noise floor."""

    category = "no-shedding"


DIV_TOL = 1e-8  # post-projection divergence, relative to inlet_speed/cell_size
POISSON_TOL = 1e-10  # relative residual
POISSON_MAXITER = 10_000


@dataclass(frozen=True)
class FlowConfig:
    domain_height: float = 3.0  # m (cross-stream)
    domain_width: float = 20.0  # m (streamwise)
    nx: int = 100  # streamwise cells
    ny: int = 50  # cross-stream cells
    inlet_speed: float = 2.0  # m/s
    cylinder_center: tuple[float, float] = (5.0, 1.5)  # (x, y) m
    cylinder_diameter: float = 1.0  # m; 0 disables the cylinder
    viscosity: float = 0.01  # m^2/s
    dt: float = 0.005  # s
    t_end: float = 500.0  # s
    sample_every: float = 0.01  # s
    discard_before: float = 50.0  # s
    # one-time symmetry breaking: cross-stream inlet component of
    # perturb_frac * inlet_speed while t < perturb_until
    perturb_frac: float = 0.01
    perturb_until: float = 1.0

    @property
    def dx(self) -> float:
        return self.domain_width / self.nx

    @property
    def dy(self) -> float:
        return self.domain_height / self.ny

    def validate(self) -> None:
        if min(self.nx, self.ny) < 4:
            raise ValueError("grid must be at least 4x4 cells")
        steps = self.sample_every / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValueError(
                f"sample_every ({self.sample_every}) must be an integer "
                f"multiple of dt ({self.dt})"
            )
        cfl = self.inlet_speed * self.dt / min(self.dx, self.dy)
        if cfl > 0.9:
            raise CFLError(
                f"advective CFL {cfl:.3f} at inlet speed exceeds 0.9; "
                f"reduce dt below {0.9 * min(self.dx, self.dy) / self.inlet_speed:.4g}"
            )


def reynolds(cfg: FlowConfig) -> float:
    return cfg.inlet_speed * cfg.cylinder_diameter / cfg.viscosity


@dataclass
class FlowState:
    u: np.ndarray  # (ny, nx+1)
    v: np.ndarray  # (ny+1, nx)
    p: np.ndarray  # (ny, nx)
    t: float
    solid_mask: np.ndarray  # (ny, nx) bool, True = solid cell


def initial_state(cfg: FlowConfig) -> FlowState:
    cfg.validate()
    solid = _solid_mask(cfg)
    u = np.full((cfg.ny, cfg.nx + 1), cfg.inlet_speed)
    v = np.zeros((cfg.ny + 1, cfg.nx))
    uf, vf = _face_fluid(solid)
    u[~uf] = 0.0
    return FlowState(u, v, np.zeros((cfg.ny, cfg.nx)), 0.0, solid)


def _solid_mask(cfg: FlowConfig) -> np.ndarray:
    if cfg.cylinder_diameter <= 0:
        return np.zeros((cfg.ny, cfg.nx), dtype=bool)
    xc = (np.arange(cfg.nx) + 0.5) * cfg.dx
    yc = (np.arange(cfg.ny) + 0.5) * cfg.dy
    cxm, cym = cfg.cylinder_center
    r2 = (xc[None, :] - cxm) ** 2 + (yc[:, None] - cym) ** 2
    return r2 <= (cfg.cylinder_diameter / 2) ** 2


def _face_fluid(solid: np.ndarray):
    """Boolean masks of u- and v-faces not touching a solid cell."""
    ny, nx = solid.shape
    uf = np.ones((ny, nx + 1), dtype=bool)
    uf[:, :-1] &= ~solid
    uf[:, 1:] &= ~solid
    vf = np.ones((ny + 1, nx), dtype=bool)
    vf[:-1, :] &= ~solid
    vf[1:, :] &= ~solid
    return uf, vf


# ---------------------------------------------------------------------------
# TVD advection (MC limiter), dimension-by-dimension flux form


def _mc_limiter(r: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, np.minimum(np.minimum(2.0 * r, 0.5 * (1.0 + r)), 2.0))


def _flux_tendency(qpad: np.ndarray, w: np.ndarray, h: float, dt: float) -> np.ndarray:
    """Conservative limited-upwind tendency along the last axis.

    ``qpad`` carries two ghost cells on each end (n real cells -> n+4),
    ``w`` holds the n+1 face-normal velocities. Returns -dF/dx for the n
    real cells.
    """
    qLL = qpad[..., :-3]
    qL = qpad[..., 1:-2]
    qR = qpad[..., 2:-1]
    qRR = qpad[..., 3:]
    dq = qR - qL
    up = w >= 0
    grad_up = np.where(up, qL - qLL, qRR - qR)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(dq != 0, grad_up / np.where(dq != 0, dq, 1.0), 0.0)
    phi = _mc_limiter(r)
    aw = np.abs(w)
    flux = np.where(up, w * qL, w * qR)
    flux += 0.5 * aw * (1.0 - aw * dt / h) * phi * dq
    return -(flux[..., 1:] - flux[..., :-1]) / h


def _pad_axis(q, axis, left, right):
    """Two ghost layers per side along ``axis`` with given ghost values."""
    q = np.moveaxis(q, axis, -1)
    out = np.concatenate([left, left, q, right, right], axis=-1)
    return out


def _advect(cfg: FlowConfig, u: np.ndarray, v: np.ndarray, v_in: float):
    """Advective tendencies (du/dt, dv/dt) with MC-limited TVD fluxes."""
    ny, nx, dx, dy, dt = cfg.ny, cfg.nx, cfg.dx, cfg.dy, cfg.dt
    uin = cfg.inlet_speed

    # --- u component -------------------------------------------------------
    # x sweep: faces at cell centers, w = interpolated u
    left = np.full((ny, 1), uin)
    upad = np.concatenate([left, left, u, u[:, -1:], u[:, -1:]], axis=1)
    wux = 0.5 * (upad[:, 1:-2] + upad[:, 2:-1])  # (ny, nx+2)
    du = _flux_tendency(upad, wux, dx, dt)
    # y sweep: faces at grid corners, w = interpolated v (free-slip: mirror)
    vc = np.empty((ny + 1, nx + 1))
    vc[:, 1:-1] = 0.5 * (v[:, :-1] + v[:, 1:])
    vc[:, 0] = v_in
    vc[:, -1] = v[:, -1]
    upady = np.concatenate([u[:1], u[:1], u, u[-1:], u[-1:]], axis=0)
    du += np.moveaxis(
        _flux_tendency(np.moveaxis(upady, 0, -1), np.moveaxis(vc, 0, -1), dy, dt),
        -1,
        0,
    )

    # --- v component -------------------------------------------------------
    # x sweep: faces at grid corners, w = interpolated u
    uc = np.empty((ny + 1, nx + 1))
    uc[1:-1] = 0.5 * (u[:-1] + u[1:])
    uc[0] = u[0]
    uc[-1] = u[-1]
    vl = np.full((ny + 1, 1), v_in)
    vpadx = np.concatenate([vl, vl, v, v[:, -1:], v[:, -1:]], axis=1)
    dv = _flux_tendency(vpadx, uc, dx, dt)
    # y sweep: faces at cell centers, w = interpolated v; walls reflect odd
    top = -v[1:2]
    bot = -v[-2:-1]
    vpady = np.concatenate([top, top, v, bot, bot], axis=0)
    wvy = 0.5 * (vpady[1:-2] + vpady[2:-1])  # (ny+2, nx)
    dv += np.moveaxis(
        _flux_tendency(np.moveaxis(vpady, 0, -1), np.moveaxis(wvy, 0, -1), dy, dt),
        -1,
        0,
    )
    return du, dv


def _diffuse(cfg: FlowConfig, u: np.ndarray, v: np.ndarray, v_in: float):
    """Viscous tendencies with central differences."""
    dx2, dy2 = cfg.dx**2, cfg.dy**2
    nu = cfg.viscosity

    up = np.pad(u, ((1, 1), (1, 1)), mode="edge")  # free-slip north/south,
    # zero-gradient beyond inlet/outlet faces (boundary faces are refixed)
    lap_u = (up[1:-1, 2:] - 2 * u + up[1:-1, :-2]) / dx2
    lap_u += (up[2:, 1:-1] - 2 * u + up[:-2, 1:-1]) / dy2

    vgl = 2 * v_in - v[:, :1]  # Dirichlet ghost at the inlet
    vp = np.concatenate([vgl, v, v[:, -1:]], axis=1)
    lap_v = (vp[:, 2:] - 2 * v + vp[:, :-2]) / dx2
    lap_v_y = np.zeros_like(v)
    lap_v_y[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / dy2
    return nu * lap_u, nu * (lap_v + lap_v_y)


# ---------------------------------------------------------------------------
# pressure Poisson operator


class _PoissonOperator:
    """SPD negative-Laplacian over cells, Neumann everywhere except a
    Dirichlet (phi = 0) condition on the outlet face; solid cells get
    identity rows. Solved by preconditioned conjugate gradients with the
    prefactorized operator as preconditioner."""

    def __init__(self, cfg: FlowConfig, solid: np.ndarray):
        ny, nx = cfg.ny, cfg.nx
        ax, ay = 1.0 / cfg.dx**2, 1.0 / cfg.dy**2
        n = ny * nx
        idx = np.arange(n).reshape(ny, nx)
        fluid = ~solid
        diag = np.zeros((ny, nx))
        rows, cols, vals = [], [], []
        # east/west neighbors
        both = fluid[:, :-1] & fluid[:, 1:]
        diag[:, :-1][both] += ax
        diag[:, 1:][both] += ax
        rows += [idx[:, :-1][both], idx[:, 1:][both]]
        cols += [idx[:, 1:][both], idx[:, :-1][both]]
        vals += [np.full(both.sum(), -ax)] * 2
        # north/south neighbors
        both = fluid[:-1, :] & fluid[1:, :]
        diag[:-1][both] += ay
        diag[1:][both] += ay
        rows += [idx[:-1][both], idx[1:][both]]
        cols += [idx[1:][both], idx[:-1][both]]
        vals += [np.full(both.sum(), -ay)] * 2
        # outlet face: Dirichlet phi = 0 at the face midpoint
        out = fluid[:, -1]
        diag[:, -1][out] += 2 * ax
        # solid cells: identity
        diag[solid] = 1.0

        rows.append(idx.ravel())
        cols.append(idx.ravel())
        vals.append(diag.ravel())
        self.matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        self._lu = spla.splu(self.matrix.tocsc())
        self.shape = (ny, nx)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """PCG to relative residual POISSON_TOL; raises PoissonError with the
        residual history on non-convergence."""
        bf = b.ravel()
        bnorm = float(np.linalg.norm(bf))
        if bnorm == 0.0:
            return np.zeros(self.shape)
        x = np.zeros_like(bf)
        r = bf.copy()
        z = self._lu.solve(r)
        d = z.copy()
        rz = float(r @ z)
        history = []
        for _ in range(POISSON_MAXITER):
            ad = self.matrix @ d
            alpha = rz / float(d @ ad)
            x += alpha * d
            r -= alpha * ad
            res = float(np.linalg.norm(r)) / bnorm
            history.append(res)
            if res <= POISSON_TOL:
                return x.reshape(self.shape)
            z = self._lu.solve(r)
            rz_new = float(r @ z)
            d = z + (rz_new / rz) * d
            rz = rz_new
        raise PoissonError(
            f"pressure Poisson solve stalled at residual {history[-1]:.3e} "
            f"after {POISSON_MAXITER} iterations",
            history,
        )


@lru_cache(maxsize=4)
def _solver_parts(cfg: FlowConfig):
    solid = _solid_mask(cfg)
    uf, vf = _face_fluid(solid)
    return solid, uf, vf, _PoissonOperator(cfg, solid)


def _divergence(cfg: FlowConfig, u, v, fluid):
    div = (u[:, 1:] - u[:, :-1]) / cfg.dx + (v[1:] - v[:-1]) / cfg.dy
    div[~fluid] = 0.0
    return div


def step(state: FlowState, cfg: FlowConfig) -> FlowState:
    """Advance one dt. Post-projection divergence is checked against DIV_TOL
    (relative to inlet_speed / cell_size)."""
    cfg.validate()
    solid, uf, vf, poisson = _solver_parts(cfg)
    fluid = ~solid
    dt, dx, dy = cfg.dt, cfg.dx, cfg.dy
    u, v, p = state.u, state.v, state.p
    v_in = cfg.perturb_frac * cfg.inlet_speed if state.t < cfg.perturb_until else 0.0

    adv_u, adv_v = _advect(cfg, u, v, v_in)
    dif_u, dif_v = _diffuse(cfg, u, v, v_in)
    # incremental scheme: the predictor carries the previous pressure gradient
    gpx = np.zeros_like(u)
    gpx[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / dx
    gpy = np.zeros_like(v)
    gpy[1:-1] = (p[1:] - p[:-1]) / dy

    us = u + dt * (adv_u + dif_u - gpx)
    vs = v + dt * (adv_v + dif_v - gpy)

    # boundary + solid faces
    us[:, 0] = cfg.inlet_speed
    us[:, -1] = us[:, -2]  # zero-gradient outflow ...
    q_in = cfg.inlet_speed * cfg.ny
    us[:, -1] += (q_in - us[:, -1].sum()) / cfg.ny  # ... with flux correction
    vs[0] = 0.0
    vs[-1] = 0.0
    us[~uf] = 0.0
    vs[~vf] = 0.0

    div_star = _divergence(cfg, us, vs, fluid)
    phi = poisson.solve(-div_star / dt)

    un = us.copy()
    vn = vs.copy()
    un[:, 1:-1] -= dt * (phi[:, 1:] - phi[:, :-1]) / dx
    un[:, -1] -= dt * (-2.0 * phi[:, -1]) / dx  # Dirichlet ghost at outlet
    vn[1:-1] -= dt * (phi[1:] - phi[:-1]) / dy
    un[~uf] = 0.0
    vn[~vf] = 0.0

    # rotational incremental pressure update
    pn = p + phi - cfg.viscosity * div_star
    pn[solid] = 0.0

    div = _divergence(cfg, un, vn, fluid)
    # normalize by inlet_speed/cell_size (fall back to an O(1) velocity scale
    # for the zero-inflow diagnostic cases)
    uref = cfg.inlet_speed if cfg.inlet_speed > 0 else max(1.0, float(np.abs(un).max()))
    norm_div = float(np.abs(div).max()) * min(dx, dy) / uref
    if norm_div > DIV_TOL:
        raise DivergenceError(
            f"post-projection divergence {norm_div:.3e} exceeds {DIV_TOL:.0e} "
            f"at t={state.t + dt:.4f}"
        )
    return FlowState(un, vn, pn, state.t + dt, solid)


def cell_velocities(state: FlowState) -> np.ndarray:
    """(2, ny, nx) cell-centered velocity snapshot."""
    uc = 0.5 * (state.u[:, :-1] + state.u[:, 1:])
    vc = 0.5 * (state.v[:-1] + state.v[1:])
    return np.stack([uc, vc])


def snapshot_count(cfg: FlowConfig) -> int:
    """Number of samples simulate() will emit, from integer step arithmetic."""
    stride = round(cfg.sample_every / cfg.dt)
    total = round(cfg.t_end / cfg.dt)
    discard = round(cfg.discard_before / cfg.dt)
    first = (discard // stride + 1) * stride  # first sampled step after discard
    if first > total:
        return 0
    return (total - first) // stride + 1


def simulate(cfg: FlowConfig, progress=None) -> SnapshotSeries:
    """Run to t_end, discarding samples at or before discard_before, emitting
    a (2, ny, nx) snapshot every sample_every seconds."""
    cfg.validate()
    stride = round(cfg.sample_every / cfg.dt)
    total = round(cfg.t_end / cfg.dt)
    discard = round(cfg.discard_before / cfg.dt)
    n_out = snapshot_count(cfg)
    out = np.zeros((n_out, 2, cfg.ny, cfg.nx))
    state = initial_state(cfg)
    k = 0
    for n in range(1, total + 1):
        state = step(state, cfg)
        if n % stride == 0 and n > discard:
            out[k] = cell_velocities(state)
            k += 1
            if progress is not None:
                progress(k, n_out, state.t)
    mask = ~state.solid_mask
    return SnapshotSeries(out, cfg.sample_every, ("m/s", "m/s"), mask)


# ---------------------------------------------------------------------------
# shedding diagnostics


def shedding_period(probe: np.ndarray, dt_sample: float) -> float:
    """Period of the dominant oscillation: 1 / argmax of the magnitude
    spectrum with DC excluded."""
    probe = np.asarray(probe, dtype=float)
    if probe.ndim != 1 or probe.size < 16:
        raise ValueError("probe must be a 1-D series of at least 16 samples")
    spec = np.abs(_fft.fft(probe - probe.mean()))
    half = spec[1 : probe.size // 2 + 1]
    peak = int(np.argmax(half))
    floor = float(np.median(half))
    if half[peak] <= 10.0 * floor or half[peak] == 0.0:
        raise NoSheddingError(
            f"no spectral peak above the noise floor (peak {half[peak]:.3e} "
            f"vs floor {floor:.3e})"
        )
    freq = (peak + 1) / (probe.size * dt_sample)
    return 1.0 / freq


def wake_probe(series: SnapshotSeries, cfg: FlowConfig) -> np.ndarray:
    """Cross-stream velocity time series at a point in the near wake,
    two diameters downstream of the cylinder on its centerline."""
    cx, cy = cfg.cylinder_center
    px = cx + 2.0 * max(cfg.cylinder_diameter, cfg.dx)
    i = min(int(px / cfg.dx), cfg.nx - 1)
    j = min(int(cy / cfg.dy), cfg.ny - 1)
    return series.data[:, 1, j, i]
