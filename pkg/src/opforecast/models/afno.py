"""AFNO transformer block: layer norm, Fourier token mixing with
block-diagonal per-frequency complex weights and soft-threshold
sparsification, then a token-wise MLP, each behind a residual connection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .mlp import trunc_normal
from .spectral import ConfigError


@dataclass
class AFNOBlockParams:
    n_blocks: int
    sparsity_threshold: float
    gamma1: np.ndarray
    beta1: np.ndarray
    mix_w1_re: np.ndarray  # (n_blocks, block, block)
    mix_w1_im: np.ndarray
    mix_b1_re: np.ndarray  # (n_blocks, block)
    mix_b1_im: np.ndarray
    mix_w2_re: np.ndarray
    mix_w2_im: np.ndarray
    mix_b2_re: np.ndarray
    mix_b2_im: np.ndarray
    gamma2: np.ndarray
    beta2: np.ndarray
    mlp_w1: np.ndarray  # (d, ratio*d)
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray

    _FIELDS = (
        "gamma1", "beta1",
        "mix_w1_re", "mix_w1_im", "mix_b1_re", "mix_b1_im",
        "mix_w2_re", "mix_w2_im", "mix_b2_re", "mix_b2_im",
        "gamma2", "beta2",
        "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
    )

    def tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return [(prefix + name, getattr(self, name)) for name in self._FIELDS]

    def lift(self, tape: ad.Tape) -> "AFNOBlockParams":
        kw = {name: tape.variable(getattr(self, name)) for name in self._FIELDS}
        return AFNOBlockParams(self.n_blocks, self.sparsity_threshold, **kw)


def init_afno_block(
    rng: np.random.Generator,
    embed_dim: int,
    n_blocks: int = 8,
    sparsity_threshold: float = 0.01,
    mlp_ratio: int = 4,
    std: float = 0.02,
) -> AFNOBlockParams:
    if embed_dim % n_blocks != 0:
        raise ConfigError(f"embed dim {embed_dim} not divisible by n_blocks {n_blocks}")
    bs = embed_dim // n_blocks
    hidden = mlp_ratio * embed_dim
    return AFNOBlockParams(
        n_blocks=n_blocks,
        sparsity_threshold=sparsity_threshold,
        gamma1=np.ones(embed_dim),
        beta1=np.zeros(embed_dim),
        mix_w1_re=trunc_normal(rng, (n_blocks, bs, bs), std),
        mix_w1_im=trunc_normal(rng, (n_blocks, bs, bs), std),
        mix_b1_re=np.zeros((n_blocks, bs)),
        mix_b1_im=np.zeros((n_blocks, bs)),
        mix_w2_re=trunc_normal(rng, (n_blocks, bs, bs), std),
        mix_w2_im=trunc_normal(rng, (n_blocks, bs, bs), std),
        mix_b2_re=np.zeros((n_blocks, bs)),
        mix_b2_im=np.zeros((n_blocks, bs)),
        gamma2=np.ones(embed_dim),
        beta2=np.zeros(embed_dim),
        mlp_w1=trunc_normal(rng, (embed_dim, hidden), std),
        mlp_b1=np.zeros(hidden),
        mlp_w2=trunc_normal(rng, (hidden, embed_dim), std),
        mlp_b2=np.zeros(embed_dim),
    )


def afno_block(params: AFNOBlockParams, tokens):
    """tokens: (..., Ht, Wt, d) real; output has the same shape."""
    tv = tokens.value if isinstance(tokens, ad.DiffValue) else np.asarray(tokens)
    d = tv.shape[-1]
    if d % params.n_blocks != 0:
        raise ConfigError(f"embed dim {d} not divisible by n_blocks {params.n_blocks}")
    taped = isinstance(tokens, ad.DiffValue) or isinstance(params.gamma1, ad.DiffValue)
    if not taped:
        tape = ad.Tape()
        out = afno_block(params, tape.variable(tv))
        return out.value
    mixed = ad.afno_mix(
        ad.layernorm(tokens, params.gamma1, params.beta1),
        params.mix_w1_re, params.mix_w1_im,
        params.mix_b1_re, params.mix_b1_im,
        params.mix_w2_re, params.mix_w2_im,
        params.mix_b2_re, params.mix_b2_im,
        lam=params.sparsity_threshold,
        n_blocks=params.n_blocks,
    )
    y = ad.add(tokens, mixed)
    z = ad.mlp2(
        ad.layernorm(y, params.gamma2, params.beta2),
        params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2,
    )
    return ad.add(y, z)
