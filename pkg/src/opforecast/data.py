"""Snapshot persistence, land masking, splits, normalization, and batching.

A :class:`SnapshotSeries` is the common currency between the flow solver,
the training loop, and the evaluation code: a contiguous ``(n, C, H, W)``
real tensor with per-channel units, an optional ocean mask (``True`` =
fluid/ocean cell), and the physical sampling interval.

The on-disk format ("OPSS") is little-endian and fully specified here:
magic ``OPSS``, u16 version, u32 n/C/H/W, f64 dt_sample, length-prefixed
per-channel unit strings, u8 mask flag, packed mask bits (row-major), then
the data as real64 in ``(n, C, H, W)`` order. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .fileio import (
    BadMagicError,
    FileFormatError,
    TruncatedError,
    VersionError,
    read_exact,
    read_struct,
)

MAGIC = b"OPSS"
VERSION = 1

# chronological split identifiers; larger = later in time
TRAIN, VAL, TEST = 0, 1, 2
_SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}


class DataConfigError(ValueError):
    """Inconsistent split/normalization/batching request."""

    category = "config"


@dataclass
class SnapshotSeries:
    data: np.ndarray  # (n, C, H, W) float64
    dt_sample: float  # seconds between snapshots
    units: tuple[str, ...]  # one per channel
    mask: Optional[np.ndarray] = None  # (H, W) bool, True = ocean/fluid
    split_id: Optional[int] = None  # set by split()

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise DataConfigError(
                f"series data must be (n, C, H, W), got shape {self.data.shape}"
            )
        if len(self.units) != self.data.shape[1]:
            raise DataConfigError(
                f"{len(self.units)} unit strings for {self.data.shape[1]} channels"
            )
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.data.shape[2:]:
                raise DataConfigError(
                    f"mask shape {self.mask.shape} does not match grid "
                    f"{self.data.shape[2:]}"
                )
            # land cells are stored as exact zeros after ingestion
            self.data[:, :, ~self.mask] = 0.0

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def ocean_count(self) -> int:
        if self.mask is None:
            return self.height * self.width
        return int(self.mask.sum())

    @property
    def land_count(self) -> int:
        return self.height * self.width - self.ocean_count


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    n_test: int

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise DataConfigError("split counts must be non-negative")


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,)
    split_id: int

    def __post_init__(self):
        if np.any(self.std <= 0):
            raise DataConfigError("normalization std must be positive per channel")


# ---------------------------------------------------------------------------
# file format


def write_series(path, s: SnapshotSeries) -> None:
    n, c, h, w = s.data.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<4I", n, c, h, w))
        f.write(struct.pack("<d", s.dt_sample))
        for unit in s.units:
            raw = unit.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        if s.mask is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(np.packbits(s.mask.ravel()).tobytes())
        f.write(s.data.astype("<f8", copy=False).tobytes())


def read_series(path) -> SnapshotSeries:
    with open(path, "rb") as f:
        magic = read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise BadMagicError(f"not a snapshot series file: magic {magic!r}")
        (version,) = read_struct(f, "<H", "version")
        if version != VERSION:
            raise VersionError(f"unsupported series version {version}")
        n, c, h, w = read_struct(f, "<4I", "dimensions")
        (dt_sample,) = read_struct(f, "<d", "dt_sample")
        units = []
        for _ in range(c):
            (ulen,) = read_struct(f, "<H", "unit length")
            units.append(read_exact(f, ulen, "unit string").decode("utf-8"))
        (has_mask,) = read_struct(f, "<B", "mask flag")
        mask = None
        if has_mask:
            nbytes = (h * w + 7) // 8
            bits = np.frombuffer(read_exact(f, nbytes, "mask bits"), dtype=np.uint8)
            mask = np.unpackbits(bits)[: h * w].reshape(h, w).astype(bool)
        payload = read_exact(f, n * c * h * w * 8, "snapshot data")
        data = np.frombuffer(payload, dtype="<f8").reshape(n, c, h, w).copy()
        trailing = f.read(1)
        if trailing:
            raise FileFormatError("trailing bytes after snapshot data")
    return SnapshotSeries(data, dt_sample, tuple(units), mask)


# ---------------------------------------------------------------------------
# splits and normalization


def split(s: SnapshotSeries, spec: SplitSpec):
    """Contiguous chronological partitions: train, then val, then test."""
    total = spec.n_train + spec.n_val + spec.n_test
    if total > s.n:
        raise DataConfigError(
            f"split {spec.n_train}/{spec.n_val}/{spec.n_test} needs {total} "
            f"snapshots, series has {s.n}"
        )
    bounds = [0, spec.n_train, spec.n_train + spec.n_val, total]
    parts = []
    for sid, (a, b) in zip((TRAIN, VAL, TEST), zip(bounds, bounds[1:])):
        parts.append(
            SnapshotSeries(
                s.data[a:b].copy(), s.dt_sample, s.units, s.mask, split_id=sid
            )
        )
    return tuple(parts)


def compute_norm_stats(s: SnapshotSeries) -> NormStats:
    """Per-channel mean/std over ocean cells of one (normally train) split."""
    if s.split_id is None:
        raise DataConfigError("normalization statistics require a split() output")
    if s.mask is None:
        vals = s.data.reshape(s.n, s.channels, -1)
    else:
        vals = s.data[:, :, s.mask]
    mean = vals.mean(axis=(0, 2))
    std = vals.std(axis=(0, 2))
    if np.any(std <= 0):
        bad = int(np.argmin(std))
        raise DataConfigError(f"channel {bad} is constant over ocean cells")
    return NormStats(mean, std, s.split_id)


def _check_stats(s: SnapshotSeries, stats: NormStats) -> None:
    if len(stats.mean) != s.channels:
        raise DataConfigError(
            f"stats cover {len(stats.mean)} channels, series has {s.channels}"
        )
    if s.split_id is not None and s.split_id < stats.split_id:
        raise DataConfigError(
            f"statistics from the {_SPLIT_NAMES[stats.split_id]} split cannot "
            f"be applied to the earlier {_SPLIT_NAMES[s.split_id]} split"
        )


def normalize(s: SnapshotSeries, stats: NormStats) -> SnapshotSeries:
    _check_stats(s, stats)
    mean = stats.mean[:, None, None]
    std = stats.std[:, None, None]
    data = (s.data - mean) / std
    if s.mask is not None:
        data[:, :, ~s.mask] = 0.0
    return replace(s, data=data)


def denormalize(s: SnapshotSeries, stats: NormStats) -> SnapshotSeries:
    _check_stats(s, stats)
    mean = stats.mean[:, None, None]
    std = stats.std[:, None, None]
    data = s.data * std + mean
    if s.mask is not None:
        data[:, :, ~s.mask] = 0.0
    return replace(s, data=data)


# ---------------------------------------------------------------------------
# batching


def batches(
    s: SnapshotSeries, batch_size: int, kind: str = "one-step-pairs", seed: int = 0
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Training item iterator.

    ``one-step-pairs``: (x_i, x_{i+1}) pairs grouped into contiguous
    chronological chunks of ``batch_size``; chunk order is shuffled by
    ``seed`` (one epoch per call). A partial final chunk is dropped.

    ``one-shot``: a single (first snapshot, full trajectory) item.
    """
    if batch_size < 1:
        raise DataConfigError("batch_size must be at least 1")
    if kind == "one-shot":
        if s.n < 1:
            raise DataConfigError("one-shot batching needs a non-empty series")
        yield s.data[0], s.data
        return
    if kind != "one-step-pairs":
        raise DataConfigError(f"unknown batch kind {kind!r}")
    n_pairs = s.n - 1
    if batch_size > n_pairs:
        raise DataConfigError(
            f"batch_size {batch_size} exceeds {n_pairs} available pairs"
        )
    n_chunks = n_pairs // batch_size
    order = np.random.default_rng(seed).permutation(n_chunks)
    for chunk in order:
        a = chunk * batch_size
        b = a + batch_size
        yield s.data[a:b], s.data[a + 1 : b + 1]


# ---------------------------------------------------------------------------
# geometry masks and the synthetic ocean stand-in

# grid shapes and exact land/ocean cell counts of the two coastal geometries
GEOMETRIES = {
    "mab": {"shape": (150, 174), "land": 4433, "ocean": 21667},
    "mb": {"shape": (450, 264), "land": 39697, "ocean": 79103},
}


def geometry_mask(name: str) -> np.ndarray:
    """Deterministic coastal-looking ocean mask with exact cell counts.

    ``True`` marks ocean. The mask combines a smooth low-frequency random
    field (fixed per geometry) with a shoreline gradient, then thresholds
    at exactly the geometry's land count.
    """
    try:
        geom = GEOMETRIES[name]
    except KeyError:
        raise DataConfigError(
            f"unknown geometry {name!r}; expected one of {sorted(GEOMETRIES)}"
        ) from None
    h, w = geom["shape"]
    rng = np.random.default_rng({"mab": 1467, "mb": 2946}[name])
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    elev = -1.8 * xx  # depth increases offshore (land hugs the left edge)
    for _ in range(10):
        fy, fx = rng.uniform(1, 5, 2)
        py, px = rng.uniform(0, 2 * np.pi, 2)
        elev += rng.uniform(0.2, 0.6) * np.cos(2 * np.pi * fy * yy + py) * np.cos(
            2 * np.pi * fx * xx + px
        )
    order = np.argsort(elev, axis=None)[::-1]  # highest elevation first
    mask = np.ones(h * w, dtype=bool)
    mask[order[: geom["land"]]] = False  # exactly land_count cells become land
    return mask.reshape(h, w)


TIDAL_PERIOD_S = 12.42 * 3600.0  # principal lunar semidiurnal constituent


def synth_ocean(
    name: str, n: int, seed: int = 0, dt_sample: float = 3600.0
) -> SnapshotSeries:
    """Synthetic band-limited surface-velocity series on a coastal geometry.

    Not reanalysis data: a low-rank sum of smooth spatial modes with slowly
    wandering coefficients plus a rotating tidal-like component at the
    12.42 h period. Useful for shape-faithful pipeline tests only.
    """
    if n < 1:
        raise DataConfigError("synthetic series needs at least one snapshot")
    mask = geometry_mask(name)
    h, w = mask.shape
    rng = np.random.default_rng(seed)
    k = 6  # spatial modes per channel
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    modes = np.empty((2, k, h, w))
    for c in range(2):
        for m in range(k):
            fy, fx = rng.uniform(0.5, 4, 2)
            py, px = rng.uniform(0, 2 * np.pi, 2)
            modes[c, m] = np.cos(2 * np.pi * fy * yy + py) * np.cos(
                2 * np.pi * fx * xx + px
            )
    t = np.arange(n) * dt_sample
    # slow random walk in coefficient space (smooth in time)
    coef = np.cumsum(rng.standard_normal((n, 2, k)), axis=0) * 0.05
    coef += rng.standard_normal((1, 2, k))
    data = np.einsum("tcm,cmhw->tchw", coef, modes)
    # rotating tidal component: u leads v by a quarter cycle
    phase = 2 * np.pi * t / TIDAL_PERIOD_S
    tidal_u, tidal_v = modes[0, 0], modes[1, 0]
    data[:, 0] += 0.8 * np.cos(phase)[:, None, None] * tidal_u
    data[:, 1] += 0.8 * np.sin(phase)[:, None, None] * tidal_v
    data *= 10.0  # plausible cm/s magnitudes
    return SnapshotSeries(data, dt_sample, ("cm/s", "cm/s"), mask)
