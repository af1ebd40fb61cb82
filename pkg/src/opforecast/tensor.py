"""Dense tensor substrate: row-major float64/complex128 numpy arrays.

The carriers are plain ndarrays; this module pins the element kinds,
validates shapes, and provides the contraction / reduction / FFT operations
the rest of the package builds on.  Broadcasting is only ever over leading
axes (numpy's trailing-alignment rule), never implicit reshaping.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import fft as _fft


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


def as_real(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    return a


def as_complex(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.complex128)
    if not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    return a


def fft2(t: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT over the last two axes."""
    return _fft.fft2(t)


def ifft2(t: np.ndarray) -> np.ndarray:
    """Inverse 2D DFT with 1/(H*W) normalization."""
    return _fft.ifft2(t)


def contract(
    a: np.ndarray,
    b: np.ndarray,
    pairs: Sequence[tuple[int, int]],
    batch: Sequence[tuple[int, int]] = (),
) -> np.ndarray:
    """Generalized contraction of `a` and `b`.

    `pairs` lists (axis_of_a, axis_of_b) to sum over; `batch` lists axis
    pairs that are matched element-wise instead of summed.  Output axes are
    the batch axes followed by the free axes of `a` then of `b`.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    pairs = [(ax % a.ndim, bx % b.ndim) for ax, bx in pairs]
    batch = [(ax % a.ndim, bx % b.ndim) for ax, bx in batch]
    for ax, bx in list(pairs) + list(batch):
        if a.shape[ax] != b.shape[bx]:
            raise ShapeError(
                f"contract: axis {ax} of shape {a.shape} != axis {bx} of shape {b.shape}"
            )
    letters = iter("abcdefghijklmnopqrstuvwxyz")
    a_sub = [""] * a.ndim
    b_sub = [""] * b.ndim
    for ax, bx in list(batch) + list(pairs):
        s = next(letters)
        a_sub[ax] = s
        b_sub[bx] = s
    for sub in (a_sub, b_sub):
        for i, s in enumerate(sub):
            if not s:
                sub[i] = next(letters)
    out_sub = (
        [a_sub[ax] for ax, _ in batch]
        + [s for i, s in enumerate(a_sub) if not any(i == ax for ax, _ in list(batch) + list(pairs))]
        + [s for i, s in enumerate(b_sub) if not any(i == bx for _, bx in list(batch) + list(pairs))]
    )
    spec = f"{''.join(a_sub)},{''.join(b_sub)}->{''.join(out_sub)}"
    return np.einsum(spec, a, b)


def reduce_stats(t: np.ndarray, axes: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and variance over the given axes."""
    t = np.asarray(t)
    axes = tuple(sorted(ax % t.ndim for ax in axes))
    if not axes:
        raise ShapeError("reduce_stats: empty axis set")
    if len(set(axes)) != len(axes):
        raise ShapeError(f"reduce_stats: duplicate axes {axes}")
    mean = t.mean(axis=axes)
    var = np.mean(np.abs(t - np.expand_dims(mean, axes)) ** 2, axis=axes)
    return mean, var
