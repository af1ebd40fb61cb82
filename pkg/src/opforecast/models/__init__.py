"""Operator-learning architectures and their checkpoint plumbing."""

from __future__ import annotations

import numpy as np

from .afno import AFNOBlockParams, afno_block, init_afno_block
from .checkpoint import (
    checkpoint_summary,
    fill_tensors,
    load_checkpoint,
    save_checkpoint,
)
from .deeponet import (
    AutoencoderParams,
    DeepONetParams,
    autoencoder_roundtrip,
    deeponet_forward,
    init_autoencoder,
    init_deeponet,
    latent_deeponet_forecast,
    ldon_queries,
)
from .fcn import FCNParams, fcn_forward, init_fcn, patchify, unpatchify
from .mlp import MLPParams, init_mlp, trunc_normal
from .spectral import ConfigError, SpectralConvParams, init_spectral_conv, spectral_conv


def fcn_hyper(params: FCNParams) -> dict:
    blk = params.blocks[0]
    return {
        "height": params.token_h * params.patch_size,
        "width": params.token_w * params.patch_size,
        "patch_size": params.patch_size,
        "embed_dim": params.embed_dim,
        "depth": params.depth,
        "channels": params.channels,
        "n_blocks": blk.n_blocks,
        "sparsity_threshold": blk.sparsity_threshold,
        "mlp_ratio": blk.mlp_w1.shape[1] // params.embed_dim,
    }


def fcn_from_hyper(hyper: dict) -> FCNParams:
    return init_fcn(
        np.random.default_rng(0),
        height=hyper["height"],
        width=hyper["width"],
        patch_size=hyper["patch_size"],
        embed_dim=hyper["embed_dim"],
        depth=hyper["depth"],
        channels=hyper["channels"],
        n_blocks=hyper["n_blocks"],
        sparsity_threshold=hyper["sparsity_threshold"],
        mlp_ratio=hyper["mlp_ratio"],
    )


def save_fcn(path, params: FCNParams) -> None:
    save_checkpoint(path, "FCN", fcn_hyper(params), params.tensors())


def load_fcn(path) -> FCNParams:
    arch, hyper, tensors = load_checkpoint(path)
    if arch != "FCN":
        raise ValueError(f"expected an FCN checkpoint, found {arch}")
    params = fcn_from_hyper(hyper)
    fill_tensors(params.tensors(), tensors)
    return params


class LatentDeepONet:
    """Bundle of the pre-trained autoencoder and the latent DeepONet."""

    def __init__(self, don: DeepONetParams, ae: AutoencoderParams, hyper: dict):
        self.don = don
        self.ae = ae
        self.hyper = hyper

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return self.don.tensors("don.") + self.ae.tensors("ae.")


def init_latent_deeponet(
    rng: np.random.Generator,
    channels: int,
    height: int,
    width: int,
    latent_dim: int = 16,
    p: int = 4,
    branch_hidden: list[int] | None = None,
    trunk_hidden: list[int] | None = None,
    ae_hidden: list[int] | None = None,
    activation: str = "tanh",
) -> LatentDeepONet:
    branch_hidden = branch_hidden if branch_hidden is not None else [64, 64]
    trunk_hidden = trunk_hidden if trunk_hidden is not None else [64, 64]
    ae_hidden = ae_hidden if ae_hidden is not None else [128]
    hyper = {
        "channels": channels,
        "height": height,
        "width": width,
        "latent_dim": latent_dim,
        "p": p,
        "branch_hidden": branch_hidden,
        "trunk_hidden": trunk_hidden,
        "ae_hidden": ae_hidden,
        "activation": activation,
    }
    don = init_deeponet(rng, latent_dim, 2, p, branch_hidden, trunk_hidden, activation)
    ae = init_autoencoder(rng, channels * height * width, latent_dim, ae_hidden, activation)
    return LatentDeepONet(don, ae, hyper)


def ldon_from_hyper(hyper: dict) -> LatentDeepONet:
    return init_latent_deeponet(
        np.random.default_rng(0),
        channels=hyper["channels"],
        height=hyper["height"],
        width=hyper["width"],
        latent_dim=hyper["latent_dim"],
        p=hyper["p"],
        branch_hidden=list(hyper["branch_hidden"]),
        trunk_hidden=list(hyper["trunk_hidden"]),
        ae_hidden=list(hyper["ae_hidden"]),
        activation=hyper["activation"],
    )


def save_ldon(path, model: LatentDeepONet) -> None:
    save_checkpoint(path, "LDON", model.hyper, model.tensors())


def load_ldon(path) -> LatentDeepONet:
    arch, hyper, tensors = load_checkpoint(path)
    if arch != "LDON":
        raise ValueError(f"expected an LDON checkpoint, found {arch}")
    model = ldon_from_hyper(hyper)
    fill_tensors(model.tensors(), tensors)
    return model
