"""Autoregressive snapshot forecaster: patch embedding + learned position
embedding, a stack of AFNO blocks over the token grid, and a linear head
back to patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .afno import AFNOBlockParams, afno_block, init_afno_block
from .mlp import trunc_normal
from .spectral import ConfigError


@dataclass
class FCNParams:
    patch_size: int
    embed_dim: int
    channels: int
    token_h: int
    token_w: int
    embed_w: np.ndarray  # (channels*p*p, d)
    embed_b: np.ndarray  # (d,)
    pos: np.ndarray  # (token_h, token_w, d)
    blocks: list[AFNOBlockParams]
    head_w: np.ndarray  # (d, channels*p*p)
    head_b: np.ndarray  # (channels*p*p,)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [
            (prefix + "embed_w", self.embed_w),
            (prefix + "embed_b", self.embed_b),
            (prefix + "pos", self.pos),
        ]
        for i, blk in enumerate(self.blocks):
            out += blk.tensors(f"{prefix}block{i}.")
        out += [(prefix + "head_w", self.head_w), (prefix + "head_b", self.head_b)]
        return out

    def lift(self, tape: ad.Tape) -> "FCNParams":
        return FCNParams(
            self.patch_size,
            self.embed_dim,
            self.channels,
            self.token_h,
            self.token_w,
            tape.variable(self.embed_w),
            tape.variable(self.embed_b),
            tape.variable(self.pos),
            [b.lift(tape) for b in self.blocks],
            tape.variable(self.head_w),
            tape.variable(self.head_b),
        )


def init_fcn(
    rng: np.random.Generator,
    height: int,
    width: int,
    patch_size: int,
    embed_dim: int,
    depth: int,
    channels: int = 2,
    n_blocks: int = 8,
    sparsity_threshold: float = 0.01,
    mlp_ratio: int = 4,
    std: float = 0.02,
) -> FCNParams:
    if height % patch_size or width % patch_size:
        raise ConfigError(
            f"grid ({height}, {width}) not divisible by patch size {patch_size}"
        )
    token_h, token_w = height // patch_size, width // patch_size
    pdim = channels * patch_size * patch_size
    return FCNParams(
        patch_size=patch_size,
        embed_dim=embed_dim,
        channels=channels,
        token_h=token_h,
        token_w=token_w,
        embed_w=trunc_normal(rng, (pdim, embed_dim), std),
        embed_b=np.zeros(embed_dim),
        pos=np.zeros((token_h, token_w, embed_dim)),
        blocks=[
            init_afno_block(rng, embed_dim, n_blocks, sparsity_threshold, mlp_ratio, std)
            for _ in range(depth)
        ],
        head_w=trunc_normal(rng, (embed_dim, pdim), std),
        head_b=np.zeros(pdim),
    )


def patchify(x, patch_size: int):
    """(..., C, H, W) -> (..., H/p, W/p, C*p*p) token features."""
    xv = x.value if isinstance(x, ad.DiffValue) else np.asarray(x)
    c, h, w = xv.shape[-3], xv.shape[-2], xv.shape[-1]
    p = patch_size
    lead = xv.shape[:-3]
    nl = len(lead)
    shape1 = lead + (c, h // p, p, w // p, p)
    perm = tuple(range(nl)) + (nl + 1, nl + 3, nl, nl + 2, nl + 4)
    shape2 = lead + (h // p, w // p, c * p * p)
    if isinstance(x, ad.DiffValue):
        return ad.reshape(ad.transpose(ad.reshape(x, shape1), perm), shape2)
    return np.transpose(xv.reshape(shape1), perm).reshape(shape2)


def unpatchify(tokens, channels: int, patch_size: int):
    """(..., Ht, Wt, C*p*p) -> (..., C, Ht*p, Wt*p)."""
    tv = tokens.value if isinstance(tokens, ad.DiffValue) else np.asarray(tokens)
    ht, wt = tv.shape[-3], tv.shape[-2]
    p = patch_size
    lead = tv.shape[:-3]
    nl = len(lead)
    shape1 = lead + (ht, wt, channels, p, p)
    perm = tuple(range(nl)) + (nl + 2, nl, nl + 3, nl + 1, nl + 4)
    shape2 = lead + (channels, ht * p, wt * p)
    if isinstance(tokens, ad.DiffValue):
        return ad.reshape(ad.transpose(ad.reshape(tokens, shape1), perm), shape2)
    return np.transpose(tv.reshape(shape1), perm).reshape(shape2)


def fcn_forward(params: FCNParams, x):
    """One forecast step: x (..., C, H, W) -> same shape."""
    xv = x.value if isinstance(x, ad.DiffValue) else np.asarray(x, dtype=np.float64)
    c, h, w = xv.shape[-3], xv.shape[-2], xv.shape[-1]
    p = params.patch_size
    if h % p or w % p:
        raise ConfigError(f"grid ({h}, {w}) not divisible by patch size {p}")
    if (h // p, w // p) != (params.token_h, params.token_w):
        raise ConfigError(
            f"token grid ({h // p}, {w // p}) does not match model "
            f"({params.token_h}, {params.token_w})"
        )
    taped = isinstance(x, ad.DiffValue) or isinstance(params.embed_w, ad.DiffValue)
    if not taped:
        tape = ad.Tape()
        return fcn_forward(params, tape.variable(xv)).value
    tokens = ad.add(ad.add(ad.matmul(patchify(x, p), params.embed_w), params.embed_b), params.pos)
    for blk in params.blocks:
        tokens = afno_block(blk, tokens)
    out = ad.add(ad.matmul(tokens, params.head_w), params.head_b)
    return unpatchify(out, c, p)
