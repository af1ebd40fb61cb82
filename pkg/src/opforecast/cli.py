"""Command-line entry point.

Subcommands: simulate | synth-ocean | train | forecast | evaluate | render |
inspect. Exit codes: 0 success, 2 usage error, 3 config validation failure,
1 any other failure; errors print one machine-parseable line
``error: category=<category>: <message>``.

The environment variable OPFC_THREADS caps internal parallelism; 0 (the
default used by the tests) keeps everything sequential and reproducible.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import cfd, models
from . import data as ds
from . import evaluate as ev
from . import train as tr
from .config import ConfigError, load_config
from .fileio import FileFormatError
from .models.checkpoint import MAGIC as CHECKPOINT_MAGIC

USAGE_EXIT = 2
CONFIG_EXIT = 3


def _fail(exc: Exception, code: int = 1) -> int:
    category = getattr(exc, "category", exc.__class__.__name__.lower())
    print(f"error: category={category}: {exc}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opforecast",
        description="Neural-operator forecasting toolkit (CFD data generation, "
        "FCN/L-DoN training, forecast evaluation).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the flow solver, write a series")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output .opss path (required unless --dry-run)")
    p.add_argument(
        "--dry-run",
        action="store_true",
        help="print the snapshot count from sampling arithmetic; no simulation",
    )

    p = sub.add_parser("synth-ocean", help="generate a synthetic coastal series")
    p.add_argument("--geometry", required=True, choices=sorted(ds.GEOMETRIES))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=3600.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model on a series file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="input .opss series")
    p.add_argument("--out", required=True, help="output .opfc checkpoint")
    p.add_argument("--history-dir", help="directory for loss history files")

    p = sub.add_parser("forecast", help="roll a trained model forward")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="series supplying the start state")
    p.add_argument("--start", type=int, default=0, help="start snapshot index")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True, help="output .opss forecast")

    p = sub.add_parser("evaluate", help="RMSE-per-lead report for a forecast")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("render", help="render one snapshot to a PPM image")
    p.add_argument("--series", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", help="print series/checkpoint headers")
    p.add_argument("path")
    return parser


def _load_and_split(series, cfg):
    d = cfg.data
    if d.n_train <= 0:
        raise ConfigError("data.n_train must be positive for training")
    train_s, val_s, _ = ds.split(series, ds.SplitSpec(d.n_train, d.n_val, d.n_test))
    stats = None
    if d.normalize:
        stats = ds.compute_norm_stats(train_s)
        train_s = ds.normalize(train_s, stats)
        val_s = ds.normalize(val_s, stats)
    return train_s, val_s, stats


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.dry_run:
        n = cfd.snapshot_count(cfg.flow)
        print(
            f"snapshots={n} shape=(2,{cfg.flow.ny},{cfg.flow.nx}) "
            f"sample_every={cfg.flow.sample_every}"
        )
        return 0
    if not args.out:
        raise ConfigError("simulate needs --out (or --dry-run)")

    def progress(k, total, t):
        if k % 500 == 0 or k == total:
            print(f"sampled {k}/{total} (t={t:.2f}s)", flush=True)

    series = cfd.simulate(cfg.flow, progress=progress)
    ds.write_series(args.out, series)
    print(f"wrote {series.n} snapshots to {args.out}")
    return 0


def cmd_synth_ocean(args) -> int:
    series = ds.synth_ocean(args.geometry, args.n, seed=args.seed, dt_sample=args.dt)
    ds.write_series(args.out, series)
    print(
        f"wrote {series.n} synthetic snapshots ({series.height}x{series.width}, "
        f"{series.land_count} land / {series.ocean_count} ocean) to {args.out}"
    )
    return 0


def _init_models(cfg, series):
    rng = np.random.default_rng(cfg.train.seed)
    m = cfg.model
    if m.arch == "fcn":
        return models.init_fcn(
            rng,
            series.height,
            series.width,
            m.patch_size,
            m.embed_dim,
            m.depth,
            channels=series.channels,
            n_blocks=m.n_blocks,
            sparsity_threshold=m.sparsity_threshold,
            mlp_ratio=m.mlp_ratio,
        )
    return models.init_latent_deeponet(
        rng,
        series.channels,
        series.height,
        series.width,
        latent_dim=m.latent_dim,
        p=m.p,
        branch_hidden=m.branch_hidden,
        trunk_hidden=m.trunk_hidden,
        ae_hidden=m.ae_hidden,
    )


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    series = ds.read_series(args.data)
    train_s, val_s, _ = _load_and_split(series, cfg)
    model = _init_models(cfg, series)
    log = lambda msg: print(msg, flush=True)
    if cfg.model.arch == "fcn":
        result = tr.train_fcn(
            model, train_s, val_s, cfg.train, checkpoint_path=args.out, log=log
        )
        histories = {"train": result.train_losses, "val": result.val_losses}
    else:
        ae_res, don_res = tr.train_ldon(
            model,
            train_s,
            val_s,
            cfg.train,
            horizon=min(cfg.eval.horizon, train_s.n - 1),
            checkpoint_path=args.out,
            log=log,
        )
        result = don_res
        histories = {
            "ae_train": ae_res.train_losses,
            "ae_val": ae_res.val_losses,
            "train": don_res.train_losses,
            "val": don_res.val_losses,
        }
    if args.history_dir:
        import os

        os.makedirs(args.history_dir, exist_ok=True)
        for name, losses in histories.items():
            tr.write_loss_history(
                os.path.join(args.history_dir, f"loss_{name}.txt"), losses
            )
    print(
        f"trained {cfg.model.arch}; best val {result.best_val:.6e} "
        f"at epoch {result.best_epoch}; checkpoint {args.out}"
    )
    return 0


def cmd_forecast(args) -> int:
    cfg = load_config(args.config)
    series = ds.read_series(args.data)
    train_s, _, stats = _load_and_split(series, cfg)
    if not 0 <= args.start < series.n:
        raise ConfigError(f"start index {args.start} outside series of {series.n}")
    x0 = series.data[args.start]
    if cfg.model.arch == "fcn":
        params = models.load_fcn(args.model)
        result = ev.rollout(
            params,
            x0,
            args.steps,
            stats=stats,
            mask=series.mask,
            dt_sample=series.dt_sample,
            units=series.units,
        )
        out = result.series
        if result.truncated:
            print(
                f"warning: non-finite forecast truncated at {out.n} snapshots",
                file=sys.stderr,
            )
    else:
        model = models.load_ldon(args.model)
        data = models.latent_deeponet_forecast(model.don, model.ae, x0, args.steps + 1)
        out = ds.SnapshotSeries(data, series.dt_sample, series.units, series.mask)
    ds.write_series(args.out, out)
    print(f"wrote forecast of {out.n} snapshots to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    pred = ds.read_series(args.pred)
    truth = ds.read_series(args.truth)
    report = ev.rmse_per_lead(pred, truth, truth.mask)
    ev.write_report(args.out, report)
    print(f"wrote {len(report.lead_steps)}-lead report to {args.out}")
    return 0


def cmd_render(args) -> int:
    series = ds.read_series(args.series)
    if not 0 <= args.index < series.n:
        raise ConfigError(f"index {args.index} outside series of {series.n}")
    ev.render_field(series.data[args.index], series.mask, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_inspect(args) -> int:
    with open(args.path, "rb") as f:
        magic = f.read(4)
    if magic == ds.MAGIC:
        s = ds.read_series(args.path)
        mask_info = (
            f"mask {s.land_count} land / {s.ocean_count} ocean"
            if s.mask is not None
            else "no mask"
        )
        print(
            f"series: n={s.n} shape={s.channels}x{s.height}x{s.width} "
            f"dt_sample={s.dt_sample} units={','.join(s.units)} {mask_info}"
        )
    elif magic == CHECKPOINT_MAGIC:
        print(models.checkpoint_summary(args.path))
    else:
        raise FileFormatError(f"unrecognized file magic {magic!r}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "synth-ocean": cmd_synth_ocean,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
    "inspect": cmd_inspect,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(exc, CONFIG_EXIT)
    except (FileFormatError, ValueError, RuntimeError, OSError) as exc:
        return _fail(exc, 1)


def main() -> None:
    sys.exit(dispatch())
