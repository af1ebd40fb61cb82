"""Forecast rollout, masked RMSE-per-lead-time curves, baselines, rendering.

All metrics exclude land cells. Lead times are reported both in sample steps
and in physical units (seconds for the flow data; hours are used at the CSV
layer when the sampling interval is a minute or longer).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import models
from .data import NormStats, SnapshotSeries, denormalize, normalize


class EvalError(ValueError):
    category = "eval"


@dataclass
class ForecastReport:
    lead_steps: np.ndarray  # (L,) int
    lead_seconds: np.ndarray  # (L,) float
    rmse: np.ndarray  # (L, C) per channel
    rmse_pooled: np.ndarray  # (L,) root of channel-mean MSE
    baseline_rmse: np.ndarray  # (L, C) persistence
    field_variability: np.ndarray  # (C,) std of truth over the window
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        L = len(self.lead_steps)
        if not (
            len(self.lead_seconds) == L
            and self.rmse.shape[0] == L
            and self.baseline_rmse.shape[0] == L
            and self.rmse_pooled.shape[0] == L
        ):
            raise EvalError("report curve lengths disagree with lead_times")
        if np.any(self.rmse < 0):
            raise EvalError("negative RMSE")


@dataclass
class RolloutResult:
    series: SnapshotSeries
    truncated: bool  # non-finite values appeared; series stops at last finite


def rollout(
    params: models.FCNParams,
    x0: np.ndarray,
    n: int,
    stats: Optional[NormStats] = None,
    mask: Optional[np.ndarray] = None,
    dt_sample: float = 1.0,
    units: tuple[str, ...] = ("m/s", "m/s"),
) -> RolloutResult:
    """Iterate the one-step model n times from x0 (physical units).

    The model runs in normalized space; outputs are denormalized. The result
    holds n+1 snapshots beginning with x0 itself."""
    if n < 0:
        raise EvalError("rollout length must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    out = np.zeros((n + 1,) + x0.shape)
    out[0] = x0
    state = x0
    if stats is not None:
        state = (x0 - stats.mean[:, None, None]) / stats.std[:, None, None]
    if mask is not None:
        state = np.where(mask, state, 0.0)
    truncated = False
    for k in range(1, n + 1):
        state = models.fcn_forward(params, state)
        if mask is not None:
            state = np.where(mask, state, 0.0)
        if not np.all(np.isfinite(state)):
            out = out[:k]
            truncated = True
            break
        phys = state
        if stats is not None:
            phys = state * stats.std[:, None, None] + stats.mean[:, None, None]
            if mask is not None:
                phys = np.where(mask, phys, 0.0)
        out[k] = phys
    return RolloutResult(SnapshotSeries(out, dt_sample, units, mask), truncated)


def _check_aligned(pred: SnapshotSeries, truth: SnapshotSeries) -> None:
    if (
        pred.n != truth.n
        or pred.dt_sample != truth.dt_sample
        or pred.data.shape != truth.data.shape
    ):
        raise EvalError(
            f"misaligned series: pred axis (n={pred.n}, dt={pred.dt_sample}, "
            f"shape={pred.data.shape}) vs truth axis (n={truth.n}, "
            f"dt={truth.dt_sample}, shape={truth.data.shape})"
        )


def _masked_rmse_curve(a: np.ndarray, b: np.ndarray, mask) -> np.ndarray:
    """(L, C) spatial RMSE over ocean cells."""
    d = a - b
    if mask is None:
        mse = np.mean(d * d, axis=(2, 3))
    else:
        mse = np.mean(d[:, :, mask] * d[:, :, mask], axis=2)
    return np.sqrt(mse)


def rmse_per_lead(
    pred: SnapshotSeries, truth: SnapshotSeries, mask: Optional[np.ndarray] = None
) -> ForecastReport:
    _check_aligned(pred, truth)
    if mask is None:
        mask = truth.mask
    rmse = _masked_rmse_curve(pred.data, truth.data, mask)
    pooled = np.sqrt(np.mean(rmse**2, axis=1))
    baseline = persistence_baseline(truth.data[0], truth, mask)
    if mask is None:
        variability = truth.data.std(axis=(0, 2, 3))
    else:
        variability = truth.data[:, :, mask].std(axis=(0, 2))
    steps = np.arange(truth.n)
    return ForecastReport(
        lead_steps=steps,
        lead_seconds=steps * truth.dt_sample,
        rmse=rmse,
        rmse_pooled=pooled,
        baseline_rmse=baseline,
        field_variability=variability,
    )


def persistence_baseline(
    x0: np.ndarray, truth: SnapshotSeries, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """(L, C) RMSE of the constant forecast x0 at each lead."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != truth.data.shape[1:]:
        raise EvalError(
            f"baseline snapshot shape {x0.shape} vs truth {truth.data.shape[1:]}"
        )
    return _masked_rmse_curve(np.broadcast_to(x0, truth.data.shape), truth.data, mask)


def skill_vs_variability(report: ForecastReport) -> np.ndarray:
    """(L, C) ratio of RMSE to truth variability per channel."""
    if np.any(report.field_variability <= 0):
        raise EvalError("field variability must be positive for skill ratios")
    return report.rmse / report.field_variability[None, :]


def write_report(path, report: ForecastReport) -> None:
    """CSV with leads in steps and physical units (hours when dt >= 60 s)."""
    dt = float(report.lead_seconds[1] - report.lead_seconds[0]) if len(
        report.lead_seconds
    ) > 1 else 0.0
    in_hours = dt >= 60.0
    phys = report.lead_seconds / 3600.0 if in_hours else report.lead_seconds
    ratio = skill_vs_variability(report)
    with open(path, "w") as f:
        f.write(
            "lead_step,lead_physical,rmse_u,rmse_v,rmse_pooled,"
            "baseline_u,baseline_v,ratio_u,ratio_v\n"
        )
        for i in range(len(report.lead_steps)):
            f.write(
                f"{int(report.lead_steps[i])},{phys[i]:.6g},"
                f"{report.rmse[i, 0]:.10e},{report.rmse[i, 1]:.10e},"
                f"{report.rmse_pooled[i]:.10e},"
                f"{report.baseline_rmse[i, 0]:.10e},"
                f"{report.baseline_rmse[i, 1]:.10e},"
                f"{ratio[i, 0]:.10e},{ratio[i, 1]:.10e}\n"
            )


# ---------------------------------------------------------------------------
# rendering

# fixed speed colormap: linear interpolation through these RGB anchors
# (dark blue -> cyan -> yellow -> red), land cells in reserved gray
_ANCHORS = np.array(
    [(8, 8, 64), (0, 160, 200), (240, 220, 40), (200, 24, 24)], dtype=float
)
LAND_COLOR = (128, 128, 128)


def _colormap(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    pos = t * (len(_ANCHORS) - 1)
    lo = np.minimum(pos.astype(int), len(_ANCHORS) - 2)
    frac = (pos - lo)[..., None]
    rgb = _ANCHORS[lo] * (1 - frac) + _ANCHORS[lo + 1] * frac
    return np.round(rgb).astype(np.uint8)


def render_field(
    snapshot: np.ndarray,
    mask: Optional[np.ndarray],
    out_path,
    vmax: Optional[float] = None,
) -> None:
    """Write a binary portable pixmap (P6) of speed sqrt(u^2+v^2)."""
    snapshot = np.asarray(snapshot, dtype=float)
    if snapshot.ndim != 3 or snapshot.shape[0] != 2:
        raise EvalError(f"expected a (2, H, W) snapshot, got {snapshot.shape}")
    if not np.all(np.isfinite(snapshot)):
        raise EvalError("cannot render non-finite field")
    speed = np.hypot(snapshot[0], snapshot[1])
    if vmax is None:
        vmax = float(speed[mask].max()) if mask is not None else float(speed.max())
    scale = vmax if vmax > 0 else 1.0
    rgb = _colormap(speed / scale)
    if mask is not None:
        rgb[~mask] = LAND_COLOR
    h, w = speed.shape
    with open(out_path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())
