"""Loss computation, Adam optimization, and the epoch loop.

Training is fully deterministic: the (seed, config, data) triple pins the
batch order, every floating-point reduction, and therefore the final
checkpoint bit-for-bit. Validation never mutates optimizer state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import models
from .data import SnapshotSeries, batches, compute_norm_stats, normalize
from .tensor import ShapeError


class TrainError(RuntimeError):
    """Non-finite gradient or loss during optimization."""

    category = "train"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 2
    learning_rate: float = 5e-4
    lr_schedule: str = "none"  # none | cosine
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float = 1.0  # global gradient norm; 0 disables
    seed: int = 0
    checkpoint_every: int = 1  # epochs between best-val checkpoint probes

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_schedule not in ("none", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "cosine":
            return self.learning_rate * 0.5 * (
                1.0 + math.cos(math.pi * epoch / max(self.epochs, 1))
            )
        return self.learning_rate


# ---------------------------------------------------------------------------
# loss


def l2_loss(pred, target, mask: Optional[np.ndarray] = None):
    """Mean squared difference over (optionally ocean-masked) cells.

    Works on plain arrays and on taped DiffValues (pred may be taped)."""
    taped = isinstance(pred, ad.DiffValue)
    pshape = pred.shape if taped else np.asarray(pred).shape
    tshape = np.asarray(target).shape
    if pshape != tshape:
        raise ShapeError(f"loss shapes differ: pred {pshape} vs target {tshape}")
    if mask is not None and not np.any(mask):
        raise ShapeError("loss mask has no ocean cells")
    if taped:
        d = ad.sub(pred, target)
        sq = ad.mul(d, d)
        if mask is None:
            return ad.tensor_mean(sq)
        w = mask.astype(float)
        denom = float(np.prod(pshape[:-2])) * float(w.sum())
        return ad.scale(ad.tensor_sum(ad.mul(sq, w)), 1.0 / denom)
    d = np.asarray(pred) - target
    if mask is None:
        return float(np.mean(d * d))
    w = mask.astype(float)
    denom = float(np.prod(pshape[:-2])) * float(w.sum())
    return float(np.sum(d * d * w) / denom)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    named_params: list[tuple[str, np.ndarray]],
    grads: dict[str, np.ndarray],
    opt: OptimizerState,
    cfg: TrainConfig,
    lr: Optional[float] = None,
) -> None:
    """One in-place Adam update with bias correction and optional global-norm
    gradient clipping. Raises TrainError naming the first non-finite gradient."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient for parameter {name!r}")
    if cfg.clip_norm > 0:
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > cfg.clip_norm:
            scale = cfg.clip_norm / total
            grads = {k: g * scale for k, g in grads.items()}
    b1, b2 = cfg.adam_betas
    opt.step += 1
    t = opt.step
    if lr is None:
        lr = cfg.learning_rate
    for name, p in named_params:
        g = grads.get(name)
        if g is None:
            continue
        m = opt.m.setdefault(name, np.zeros_like(p))
        v = opt.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        p -= lr * mh / (np.sqrt(vh) + cfg.adam_eps)


@dataclass
class TrainResult:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val: float


def write_loss_history(path, losses) -> None:
    with open(path, "w") as f:
        f.write("epoch\tloss\n")
        for i, loss in enumerate(losses):
            f.write(f"{i}\t{loss:.10e}\n")


# ---------------------------------------------------------------------------
# FCN training (autoregressive one-step pairs)


def train_fcn(
    params: models.FCNParams,
    train_split: SnapshotSeries,
    val_split: SnapshotSeries,
    cfg: TrainConfig,
    checkpoint_path=None,
    log: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Train on (x_i, x_{i+1}) pairs; keeps the best-validation checkpoint.

    The splits must already be normalized; land cells are excluded from the
    loss via the series mask."""
    mask = train_split.mask
    named = params.tensors()
    opt = OptimizerState()
    train_losses, val_losses = [], []
    best_val, best_epoch = math.inf, -1
    val_x, val_y = val_split.data[:-1], val_split.data[1:]

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        epoch_loss, n_batches = 0.0, 0
        for x, y in batches(train_split, cfg.batch_size, seed=cfg.seed + epoch):
            value = _fcn_batch_step(params, named, x, y, mask, opt, cfg, lr)
            epoch_loss += value
            n_batches += 1
        train_losses.append(epoch_loss / max(n_batches, 1))

        vloss = _fcn_eval(params, val_x, val_y, mask, cfg.batch_size)
        val_losses.append(vloss)
        if log is not None:
            log(
                f"epoch {epoch}: train {train_losses[-1]:.6e} val {vloss:.6e}"
            )
        if vloss < best_val and epoch % cfg.checkpoint_every == 0:
            best_val, best_epoch = vloss, epoch
            if checkpoint_path is not None:
                models.save_fcn(checkpoint_path, params)
    if checkpoint_path is not None and best_epoch < 0:
        models.save_fcn(checkpoint_path, params)
    return TrainResult(train_losses, val_losses, best_epoch, best_val)


def _fcn_batch_step(params, named, x, y, mask, opt, cfg, lr):
    tape = ad.Tape()
    lifted = params.lift(tape)
    pred = models.fcn_forward(lifted, x)
    loss = l2_loss(pred, y, mask)
    value = float(loss.value)
    if not math.isfinite(value):
        raise TrainError(f"non-finite training loss {value}")
    slots = lifted.tensors()
    wanted = {var.node_id for _, var in slots}
    grads = ad.backward(tape, loss, wanted=wanted, free=True)
    named_grads = {
        name: grads[var.node_id] for name, var in slots if var.node_id in grads
    }
    adam_step(named, named_grads, opt, cfg, lr=lr)
    return value


def _fcn_eval(params, xs, ys, mask, batch_size, max_items: int = 512):
    """Frozen-parameter one-step validation loss (plain numpy forward)."""
    n = min(len(xs), max_items)
    if n == 0:
        return math.nan
    total = 0.0
    for a in range(0, n, max(batch_size, 8)):
        b = min(a + max(batch_size, 8), n)
        pred = models.fcn_forward(params, xs[a:b])
        total += l2_loss(pred, ys[a:b], mask) * (b - a)
    return total / n


# ---------------------------------------------------------------------------
# Latent DeepONet training (autoencoder pre-training + frozen-latent DeepONet)


def _flatten_snapshots(data: np.ndarray) -> np.ndarray:
    return data.reshape(data.shape[0], -1)


def train_autoencoder(
    ae: models.AutoencoderParams,
    train_split: SnapshotSeries,
    val_split: SnapshotSeries,
    cfg: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Pre-train the autoencoder on individual (flattened) snapshots."""
    xs = _flatten_snapshots(train_split.data)
    vxs = _flatten_snapshots(val_split.data)
    named = ae.tensors()
    opt = OptimizerState()
    rng_order = np.random.default_rng(cfg.seed)
    train_losses, val_losses = [], []
    best_val, best_epoch = math.inf, -1
    n = len(xs)
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng_order.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for a in range(0, n - bs + 1, bs):
            xb = xs[order[a : a + bs]]
            tape = ad.Tape()
            lifted = ae.lift(tape)
            _, recon = models.autoencoder_roundtrip(lifted, xb)
            loss = l2_loss(recon, xb)
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainError(f"non-finite autoencoder loss {value}")
            slots = lifted.tensors()
            wanted = {var.node_id for _, var in slots}
            grads = ad.backward(tape, loss, wanted=wanted, free=True)
            named_grads = {
                nm: grads[var.node_id] for nm, var in slots if var.node_id in grads
            }
            adam_step(named, named_grads, opt, cfg, lr=lr)
            epoch_loss += value
            n_batches += 1
        train_losses.append(epoch_loss / max(n_batches, 1))
        _, vrecon = models.autoencoder_roundtrip(ae, vxs)
        vloss = l2_loss(vrecon, vxs)
        val_losses.append(vloss)
        if log is not None:
            log(f"ae epoch {epoch}: train {train_losses[-1]:.6e} val {vloss:.6e}")
        if vloss < best_val:
            best_val, best_epoch = vloss, epoch
    return TrainResult(train_losses, val_losses, best_epoch, best_val)


def train_ldon(
    model: models.LatentDeepONet,
    train_split: SnapshotSeries,
    val_split: SnapshotSeries,
    cfg: TrainConfig,
    ae_cfg: Optional[TrainConfig] = None,
    horizon: Optional[int] = None,
    checkpoint_path=None,
    log: Optional[Callable[[str], None]] = None,
) -> tuple[TrainResult, TrainResult]:
    """Two-stage curriculum: autoencoder pre-training, then DeepONet on
    frozen latents. The DeepONet learns latent trajectories of length
    ``horizon`` starting from each training snapshot."""
    if ae_cfg is None:
        ae_cfg = TrainConfig(
            epochs=cfg.epochs,
            batch_size=max(cfg.batch_size, 8),
            learning_rate=1e-3,
            seed=cfg.seed,
        )
    ae_result = train_autoencoder(model.ae, train_split, val_split, ae_cfg, log=log)

    # frozen latents for every training snapshot
    lat = model.ae.encoder.forward(_flatten_snapshots(train_split.data))
    vlat = model.ae.encoder.forward(_flatten_snapshots(val_split.data))
    d = model.ae.latent_dim
    if horizon is None:
        horizon = min(32, len(lat) - 1)
    if horizon < 1 or horizon >= len(lat):
        raise ValueError(f"horizon {horizon} incompatible with {len(lat)} snapshots")
    ys = models.ldon_queries(horizon, d)

    named = model.don.tensors()
    opt = OptimizerState()
    rng_order = np.random.default_rng(cfg.seed + 1)
    n_starts = len(lat) - horizon + 1
    bs = min(cfg.batch_size, n_starts)
    train_losses, val_losses = [], []
    best_val, best_epoch = math.inf, -1
    vstarts = max(len(vlat) - horizon + 1, 0)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng_order.permutation(n_starts)
        epoch_loss, n_batches = 0.0, 0
        for a in range(0, n_starts - bs + 1, bs):
            idx = order[a : a + bs]
            value = _ldon_batch_step(
                model, named, lat, idx, horizon, ys, opt, cfg, lr
            )
            epoch_loss += value
            n_batches += 1
        train_losses.append(epoch_loss / max(n_batches, 1))
        if vstarts > 0:
            vloss = 0.0
            for i in range(0, vstarts, max(1, vstarts // 16)):
                out = models.deeponet_forward(model.don, vlat[i], ys)
                target = vlat[i : i + horizon].reshape(-1)
                vloss += float(np.mean((out - target) ** 2))
            vloss /= len(range(0, vstarts, max(1, vstarts // 16)))
        else:
            vloss = train_losses[-1]
        val_losses.append(vloss)
        if log is not None:
            log(f"don epoch {epoch}: train {train_losses[-1]:.6e} val {vloss:.6e}")
        if vloss < best_val:
            best_val, best_epoch = vloss, epoch
            if checkpoint_path is not None:
                models.save_ldon(checkpoint_path, model)
    if checkpoint_path is not None and best_epoch < 0:
        models.save_ldon(checkpoint_path, model)
    return ae_result, TrainResult(train_losses, val_losses, best_epoch, best_val)


def _ldon_batch_step(model, named, lat, idx, horizon, ys, opt, cfg, lr):
    tape = ad.Tape()
    lifted = model.don.lift(tape)
    total = None
    for i in idx:
        out = models.deeponet_forward(lifted, lat[i], ys)
        target = lat[i : i + horizon].reshape(-1)
        term = l2_loss(out, target)
        total = term if total is None else ad.add(total, term)
    loss = ad.scale(total, 1.0 / len(idx))
    value = float(loss.value)
    if not math.isfinite(value):
        raise TrainError(f"non-finite latent loss {value}")
    slots = lifted.tensors()
    wanted = {var.node_id for _, var in slots}
    grads = ad.backward(tape, loss, wanted=wanted, free=True)
    named_grads = {
        nm: grads[var.node_id] for nm, var in slots if var.node_id in grads
    }
    adam_step(named, named_grads, opt, cfg, lr=lr)
    return value
