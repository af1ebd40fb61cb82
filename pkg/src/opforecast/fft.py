"""Arbitrary-length FFTs over the trailing axes of batched arrays.

Smooth sizes go through a recursive mixed-radix Cooley-Tukey decomposition;
large prime sizes fall back to Bluestein's chirp-z algorithm, whose internal
convolution only ever needs power-of-two transforms.  Everything is
vectorized over leading axes, so callers batch freely.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# Primes small enough that a dense DFT matrix beats the Bluestein detour.
_DIRECT_PRIME_LIMIT = 61


@lru_cache(maxsize=None)
def _smallest_prime_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


@lru_cache(maxsize=None)
def _twiddle(p: int, m: int, sign: int) -> np.ndarray:
    n = p * m
    return np.exp(sign * 2j * np.pi * np.outer(np.arange(p), np.arange(m)) / n)


@lru_cache(maxsize=None)
def _chirp(n: int, sign: int) -> np.ndarray:
    j = np.arange(n)
    return np.exp(sign * 1j * np.pi * (j * j % (2 * n)) / n)


def _bluestein(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    c = _chirp(n, sign)
    # Linear convolution of (x * c) with conj(c), embedded in a power-of-two
    # circular convolution of length >= 2n - 1.
    size = 1
    while size < 2 * n - 1:
        size *= 2
    a = np.zeros(x.shape[:-1] + (size,), dtype=np.complex128)
    a[..., :n] = x * c
    b = np.zeros(size, dtype=np.complex128)
    b[:n] = np.conj(c)
    b[size - n + 1:] = np.conj(c[1:][::-1])
    conv = _fft1d(_fft1d(a, -1) * _fft1d(b, -1), 1) / size
    return conv[..., :n] * c


# Sizes up to this go through one dense DFT matmul; keeps recursion shallow.
_DIRECT_LIMIT = 32


@lru_cache(maxsize=None)
def _pick_radix(n: int) -> int:
    """Largest divisor of n that a dense combine handles cheaply."""
    for limit in (16, _DIRECT_LIMIT):
        best = 1
        for d in range(2, limit + 1):
            if n % d == 0:
                best = d
        if best > 1:
            return best
    return _smallest_prime_factor(n)


def _fft1d(x: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT along the last axis; sign=-1 forward, +1 inverse."""
    n = x.shape[-1]
    if n == 1:
        return x.astype(np.complex128, copy=True)
    if n <= _DIRECT_LIMIT:
        return x @ _dft_matrix(n, sign)
    p = _smallest_prime_factor(n)
    if p == n:
        if n <= _DIRECT_PRIME_LIMIT:
            return x @ _dft_matrix(n, sign)
        return _bluestein(x, sign)
    p = _pick_radix(n)
    m = n // p
    # Residue classes x[..., r::p] become the rows of a (..., p, m) block.
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    sub = _fft1d(np.ascontiguousarray(sub), sign)
    t = sub * _twiddle(p, m, sign)
    out = np.einsum("ar,...rm->...am", _dft_matrix(p, sign), t, optimize=True)
    return out.reshape(x.shape[:-1] + (n,))


def _check_nonempty(x: np.ndarray, ndim: int) -> None:
    if x.ndim < ndim:
        raise ValueError(f"need at least {ndim} axes, got shape {x.shape}")
    if x.size == 0:
        raise ValueError(f"empty input of shape {x.shape}")


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized forward DFT along one axis."""
    x = np.asarray(x, dtype=np.complex128)
    _check_nonempty(x, 1)
    moved = np.moveaxis(x, axis, -1)
    return np.moveaxis(_fft1d(np.ascontiguousarray(moved), -1), -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Normalized (1/n) inverse DFT along one axis."""
    x = np.asarray(x, dtype=np.complex128)
    _check_nonempty(x, 1)
    moved = np.moveaxis(x, axis, -1)
    out = _fft1d(np.ascontiguousarray(moved), 1) / moved.shape[-1]
    return np.moveaxis(out, -1, axis)


def fft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT over the last two axes."""
    x = np.asarray(x, dtype=np.complex128)
    _check_nonempty(x, 2)
    out = _fft1d(np.ascontiguousarray(x), -1)
    out = np.swapaxes(_fft1d(np.ascontiguousarray(np.swapaxes(out, -1, -2)), -1), -1, -2)
    return out


def ifft2(x: np.ndarray) -> np.ndarray:
    """Inverse of fft2, normalized by 1/(H*W)."""
    x = np.asarray(x, dtype=np.complex128)
    _check_nonempty(x, 2)
    h, w = x.shape[-2], x.shape[-1]
    out = _fft1d(np.ascontiguousarray(x), 1)
    out = np.swapaxes(_fft1d(np.ascontiguousarray(np.swapaxes(out, -1, -2)), 1), -1, -2)
    return out / (h * w)
