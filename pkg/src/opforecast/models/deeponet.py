"""DeepONet and its latent variant: branch net over sensor values, trunk net
over output query coordinates, combined as an inner product plus bias.

The one-shot forecaster runs the DeepONet in the latent space of a
pre-trained autoencoder.  Queries are (normalized time, normalized latent
component) pairs, so the scalar-output combination can emit a full latent
vector per forecast time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..tensor import ShapeError
from .mlp import MLPParams, init_mlp


@dataclass
class DeepONetParams:
    branch: MLPParams
    trunk: MLPParams
    bias: np.ndarray  # scalar, shape ()
    p: int

    def __post_init__(self):
        bw = self.branch.out_width if not isinstance(self.branch.weights[0], ad.DiffValue) else None
        if bw is not None and (bw != self.p or self.trunk.out_width != self.p):
            raise ShapeError(
                f"branch/trunk output widths ({self.branch.out_width}, "
                f"{self.trunk.out_width}) must equal p={self.p}"
            )

    def tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return (
            self.branch.tensors(prefix + "branch.")
            + self.trunk.tensors(prefix + "trunk.")
            + [(prefix + "bias", self.bias)]
        )

    def lift(self, tape: ad.Tape) -> "DeepONetParams":
        return DeepONetParams(
            self.branch.lift(tape), self.trunk.lift(tape), tape.variable(self.bias), self.p
        )


def init_deeponet(
    rng: np.random.Generator,
    sensor_dim: int,
    query_dim: int,
    p: int,
    branch_hidden: list[int],
    trunk_hidden: list[int],
    activation: str = "tanh",
) -> DeepONetParams:
    branch = init_mlp(rng, [sensor_dim] + branch_hidden + [p], activation)
    trunk = init_mlp(rng, [query_dim] + trunk_hidden + [p], activation)
    return DeepONetParams(branch, trunk, np.zeros(()), p)


def deeponet_forward(params: DeepONetParams, u_sensors, ys):
    """Scalar operator output at each query: sum_k b_k(u) t_k(y) + b0.

    u_sensors: (m,) sensor values; ys: (q, query_dim).  Returns (q,).
    """
    b = params.branch.forward(u_sensors)  # (p,)
    t = params.trunk.forward(ys)  # (q, p)
    taped = isinstance(b, ad.DiffValue) or isinstance(t, ad.DiffValue)
    if not taped:
        return t @ b + params.bias
    return ad.add(ad.matmul(t, b), params.bias)


@dataclass
class AutoencoderParams:
    encoder: MLPParams
    decoder: MLPParams
    latent_dim: int

    def __post_init__(self):
        if not isinstance(self.encoder.weights[0], ad.DiffValue):
            if self.encoder.out_width != self.latent_dim or self.decoder.in_width != self.latent_dim:
                raise ShapeError(
                    f"encoder out {self.encoder.out_width} / decoder in "
                    f"{self.decoder.in_width} must equal latent_dim={self.latent_dim}"
                )

    def tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return self.encoder.tensors(prefix + "enc.") + self.decoder.tensors(prefix + "dec.")

    def lift(self, tape: ad.Tape) -> "AutoencoderParams":
        return AutoencoderParams(self.encoder.lift(tape), self.decoder.lift(tape), self.latent_dim)


def init_autoencoder(
    rng: np.random.Generator,
    input_dim: int,
    latent_dim: int,
    hidden: list[int],
    activation: str = "tanh",
) -> AutoencoderParams:
    encoder = init_mlp(rng, [input_dim] + hidden + [latent_dim], activation)
    decoder = init_mlp(rng, [latent_dim] + hidden[::-1] + [input_dim], activation)
    return AutoencoderParams(encoder, decoder, latent_dim)


def autoencoder_roundtrip(params: AutoencoderParams, x):
    """x: (..., input_dim) -> (latent (..., d), reconstruction (..., input_dim))."""
    latent = params.encoder.forward(x)
    recon = params.decoder.forward(latent)
    return latent, recon


def ldon_queries(n: int, latent_dim: int) -> np.ndarray:
    """(n * latent_dim, 2) grid of (time, component) query coordinates, both
    normalized to [0, 1]; time index 0 is the initial snapshot's own time."""
    taus = np.arange(n) / max(n - 1, 1)
    comps = np.arange(latent_dim) / max(latent_dim - 1, 1)
    tt, cc = np.meshgrid(taus, comps, indexing="ij")
    return np.stack([tt.reshape(-1), cc.reshape(-1)], axis=1)


def latent_deeponet_forecast(
    don: DeepONetParams,
    ae: AutoencoderParams,
    x1: np.ndarray,
    n: int,
) -> np.ndarray:
    """One-shot forecast: encode x1, run the DeepONet over the full
    (time, component) query grid, decode every predicted latent.

    x1: (C, H, W); returns (n, C, H, W) whose first entry corresponds to
    x1's own time.
    """
    if n < 1:
        raise ValueError(f"forecast length must be >= 1, got {n}")
    shape = x1.shape
    flat = np.asarray(x1, dtype=np.float64).reshape(-1)
    latent = ae.encoder.forward(flat)
    out = deeponet_forward(don, latent, ldon_queries(n, ae.latent_dim))
    latents = out.reshape(n, ae.latent_dim)
    decoded = ae.decoder.forward(latents)
    return decoded.reshape((n,) + shape)
