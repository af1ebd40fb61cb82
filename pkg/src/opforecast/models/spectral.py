"""Spectral convolution layer: learned complex weights on truncated Fourier
modes plus a pointwise linear bypass.

Mode truncation keeps the (modes_h, modes_w) low-frequency block of the full
2D spectrum; the retained half-width block is Hermitian-mirrored before the
inverse transform so the spatial output of the spectral path is real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import fft as _fft
from ..tensor import ShapeError
from .mlp import trunc_normal


class ConfigError(ValueError):
    """Architecture/grid incompatibility."""


@dataclass
class SpectralConvParams:
    modes_h: int
    modes_w: int
    weights_re: np.ndarray  # (modes_h, modes_w, c_in, c_out)
    weights_im: np.ndarray
    bypass: np.ndarray  # (c_in, c_out)

    def tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return [
            (prefix + "wre", self.weights_re),
            (prefix + "wim", self.weights_im),
            (prefix + "bypass", self.bypass),
        ]

    def lift(self, tape: ad.Tape) -> "SpectralConvParams":
        return SpectralConvParams(
            self.modes_h,
            self.modes_w,
            tape.variable(self.weights_re),
            tape.variable(self.weights_im),
            tape.variable(self.bypass),
        )


def init_spectral_conv(
    rng: np.random.Generator,
    modes_h: int,
    modes_w: int,
    c_in: int,
    c_out: int,
    std: float = 0.02,
) -> SpectralConvParams:
    return SpectralConvParams(
        modes_h,
        modes_w,
        trunc_normal(rng, (modes_h, modes_w, c_in, c_out), std),
        trunc_normal(rng, (modes_h, modes_w, c_in, c_out), std),
        trunc_normal(rng, (c_in, c_out), std),
    )


def spectral_conv(params: SpectralConvParams, v):
    """v: (c_in, H, W) real -> (c_out, H, W) real."""
    vv = v.value if isinstance(v, ad.DiffValue) else np.asarray(v, dtype=np.float64)
    c_in, h, w = vv.shape
    wre = params.weights_re.value if isinstance(params.weights_re, ad.DiffValue) else params.weights_re
    if wre.shape[2] != c_in:
        raise ShapeError(f"spectral_conv: input channels {c_in} != weights {wre.shape[2]}")
    if params.modes_h > h or params.modes_w > w // 2 + 1:
        raise ConfigError(
            f"mode counts ({params.modes_h}, {params.modes_w}) exceed grid "
            f"({h}, {w}) with max width modes {w // 2 + 1}"
        )
    taped = isinstance(v, ad.DiffValue) or isinstance(params.weights_re, ad.DiffValue)
    if not taped:
        z = _fft.fft2(vv)[:, : params.modes_h, : params.modes_w]
        wgt = wre + 1j * params.weights_im
        mixed = np.einsum("chw,hwco->ohw", z, wgt)
        full = _embed_np(mixed, h, w)
        out = np.real(_fft.ifft2(full))
        out += np.einsum("chw,co->ohw", vv, params.bypass)
        return out
    z = ad.fft2(ad.make_complex(v, ad.scale(v, 0.0)))
    zm = ad.getitem(z, (slice(None), slice(0, params.modes_h), slice(0, params.modes_w)))
    wgt = ad.make_complex(params.weights_re, params.weights_im)
    # (mh, mw, c_out): contract channels, batch the two mode axes
    mixed = ad.contract(zm, wgt, pairs=[(0, 2)], batch=[(1, 0), (2, 1)])
    mixed = ad.transpose(mixed, (2, 0, 1))
    full = ad.embed_spectrum(mixed, h, w)
    spectral = ad.real(ad.ifft2(full))
    bypassed = ad.transpose(ad.contract(v, params.bypass, pairs=[(0, 0)]), (2, 0, 1))
    return ad.add(spectral, bypassed)


def _embed_np(block: np.ndarray, height: int, width: int) -> np.ndarray:
    mh, mw = block.shape[-2], block.shape[-1]
    rows = (height - np.arange(mh)) % height
    out = np.zeros(block.shape[:-2] + (height, width), dtype=np.complex128)
    out[..., :mh, :mw] = block
    for wcol in range(1, mw):
        if (width - wcol) % width != wcol:
            out[..., rows, width - wcol] = np.conj(block[..., :, wcol])
    return out
