"""Strict sectioned key-value run configuration.

INI-style sections (flow, data, model, train, eval). Unknown sections or
keys are rejected with the offending key path so hyperparameter typos fail
loudly instead of silently using a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional

from .cfd import FlowConfig
from .train import TrainConfig


class ConfigError(ValueError):
    category = "config"


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.split(",") if tok.strip()]


# section -> key -> (converter, default); None default means "required if the
# section is used by the subcommand"
_SCHEMA = {
    "flow": {
        "domain_height": (float, 3.0),
        "domain_width": (float, 20.0),
        "nx": (int, 100),
        "ny": (int, 50),
        "inlet_speed": (float, 2.0),
        "cylinder_x": (float, 5.0),
        "cylinder_y": (float, 1.5),
        "cylinder_diameter": (float, 1.0),
        "viscosity": (float, 0.01),
        "dt": (float, 0.005),
        "t_end": (float, 500.0),
        "sample_every": (float, 0.01),
        "discard_before": (float, 50.0),
        "perturb_frac": (float, 0.01),
        "perturb_until": (float, 1.0),
    },
    "data": {
        "geometry": (str, ""),  # mab | mb | "" (flow data)
        "synth_n": (int, 0),
        "synth_dt": (float, 3600.0),
        "n_train": (int, 0),
        "n_val": (int, 0),
        "n_test": (int, 0),
        "normalize": (_bool, True),
    },
    "model": {
        "arch": (str, "fcn"),  # fcn | ldon
        "patch_size": (int, 2),
        "embed_dim": (int, 96),
        "depth": (int, 3),
        "n_blocks": (int, 8),
        "sparsity_threshold": (float, 0.01),
        "mlp_ratio": (int, 4),
        "latent_dim": (int, 16),
        "p": (int, 4),
        "branch_hidden": (_int_list, [64, 64]),
        "trunk_hidden": (_int_list, [64, 64]),
        "ae_hidden": (_int_list, [128]),
    },
    "train": {
        "epochs": (int, 50),
        "batch_size": (int, 2),
        "learning_rate": (float, 5e-4),
        "lr_schedule": (str, "none"),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "clip_norm": (float, 1.0),
        "checkpoint_every": (int, 1),
        "seed": (int, 0),
    },
    "eval": {
        "horizon": (int, 100),
        "probe_x": (float, 7.0),
        "probe_y": (float, 1.5),
    },
}


@dataclass
class DataSection:
    geometry: str
    synth_n: int
    synth_dt: float
    n_train: int
    n_val: int
    n_test: int
    normalize: bool


@dataclass
class ModelSection:
    arch: str
    patch_size: int
    embed_dim: int
    depth: int
    n_blocks: int
    sparsity_threshold: float
    mlp_ratio: int
    latent_dim: int
    p: int
    branch_hidden: list[int]
    trunk_hidden: list[int]
    ae_hidden: list[int]


@dataclass
class EvalSection:
    horizon: int
    probe_x: float
    probe_y: float


@dataclass
class RunConfig:
    flow: FlowConfig
    data: DataSection
    model: ModelSection
    train: TrainConfig
    eval: EvalSection


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        schema = _SCHEMA[section]
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown config key {section}.{key}")
            conv, _ = schema[key]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc

    def sec(name):
        got = values.get(name, {})
        return {
            key: got.get(key, default) for key, (_, default) in _SCHEMA[name].items()
        }

    fl = sec("flow")
    flow = FlowConfig(
        domain_height=fl["domain_height"],
        domain_width=fl["domain_width"],
        nx=fl["nx"],
        ny=fl["ny"],
        inlet_speed=fl["inlet_speed"],
        cylinder_center=(fl["cylinder_x"], fl["cylinder_y"]),
        cylinder_diameter=fl["cylinder_diameter"],
        viscosity=fl["viscosity"],
        dt=fl["dt"],
        t_end=fl["t_end"],
        sample_every=fl["sample_every"],
        discard_before=fl["discard_before"],
        perturb_frac=fl["perturb_frac"],
        perturb_until=fl["perturb_until"],
    )
    tr = sec("train")
    try:
        train = TrainConfig(
            epochs=tr["epochs"],
            batch_size=tr["batch_size"],
            learning_rate=tr["learning_rate"],
            lr_schedule=tr["lr_schedule"],
            adam_betas=(tr["beta1"], tr["beta2"]),
            adam_eps=tr["adam_eps"],
            clip_norm=tr["clip_norm"],
            seed=tr["seed"],
            checkpoint_every=tr["checkpoint_every"],
        )
    except ValueError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc
    md = sec("model")
    if md["arch"] not in ("fcn", "ldon"):
        raise ConfigError(f"unknown model.arch {md['arch']!r}")
    return RunConfig(
        flow=flow,
        data=DataSection(**sec("data")),
        model=ModelSection(**md),
        train=train,
        eval=EvalSection(**sec("eval")),
    )
