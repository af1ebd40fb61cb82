import numpy as np
import pytest

from opforecast import tensor


def naive_dft2(x):
    """Direct double-loop 2D DFT, the O(N^2) oracle."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape[-2], x.shape[-1]
    jh = np.arange(h)
    jw = np.arange(w)
    eh = np.exp(-2j * np.pi * np.outer(jh, jh) / h)
    ew = np.exp(-2j * np.pi * np.outer(jw, jw) / w)
    out = np.empty_like(x)
    for k in range(h):
        for l in range(w):
            out[..., k, l] = np.sum(x * eh[k][:, None] * ew[l][None, :], axis=(-2, -1))
    return out


def naive_idft2(x):
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape[-2], x.shape[-1]
    return np.conj(naive_dft2(np.conj(x))) / (h * w)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


EXTENTS = [1, 2, 7, 8, 50, 100, 150, 174, 264]


def test_impulse_spectrum():
    x = np.zeros((4, 4), dtype=np.complex128)
    x[0, 0] = 1.0
    assert np.allclose(tensor.fft2(x), np.ones((4, 4)), atol=1e-14)


def test_constant_spectrum_is_impulse():
    s = np.ones((4, 4), dtype=np.complex128)
    out = tensor.ifft2(s)
    expect = np.zeros((4, 4), dtype=np.complex128)
    expect[0, 0] = 1.0
    assert np.allclose(out, expect, atol=1e-14)


@pytest.mark.parametrize("shape", [(3, 5), (8, 8), (7, 13), (12, 30)])
def test_round_trip(shape):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    assert rel_err(tensor.ifft2(tensor.fft2(x)), x) < 1e-12
    assert rel_err(tensor.fft2(tensor.ifft2(x)), x) < 1e-12


def test_fft2_matches_naive_50x174():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 174)) + 1j * rng.standard_normal((50, 174))
    assert rel_err(tensor.fft2(x), naive_dft2(x)) < 1e-10


def test_ifft2_matches_naive_100x264():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((100, 264)) + 1j * rng.standard_normal((100, 264))
    assert rel_err(tensor.ifft2(x), naive_idft2(x)) < 1e-10


@pytest.mark.parametrize("n", EXTENTS)
def test_all_grid_extents_against_oracle(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal((3, n)) + 1j * rng.standard_normal((3, n))
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    oracle = x @ mat.T
    from opforecast.fft import fft

    assert rel_err(fft(x), oracle) < 1e-10


@pytest.mark.parametrize("n", [67, 101, 127, 263])
def test_bluestein_large_primes(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    from opforecast.fft import fft, ifft

    assert rel_err(fft(x), mat @ x) < 1e-10
    assert rel_err(ifft(fft(x)), x) < 1e-12


def test_linearity():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((9, 14)) + 1j * rng.standard_normal((9, 14))
    b = rng.standard_normal((9, 14)) + 1j * rng.standard_normal((9, 14))
    al, be = 1.7 - 0.3j, -0.4 + 2.1j
    lhs = tensor.fft2(al * a + be * b)
    rhs = al * tensor.fft2(a) + be * tensor.fft2(b)
    assert rel_err(lhs, rhs) < 1e-12


def test_parseval():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((15, 21)) + 1j * rng.standard_normal((15, 21))
    space = np.sum(np.abs(x) ** 2)
    freq = np.sum(np.abs(tensor.fft2(x)) ** 2) / (15 * 21)
    assert abs(space - freq) / space < 1e-10


def test_empty_rejected():
    with pytest.raises(ValueError):
        tensor.fft2(np.zeros((0, 4), dtype=np.complex128))


def test_batched_leading_axes():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 6, 10)) + 1j * rng.standard_normal((4, 6, 10))
    out = tensor.fft2(x)
    for i in range(4):
        assert rel_err(out[i], tensor.fft2(x[i])) < 1e-13
