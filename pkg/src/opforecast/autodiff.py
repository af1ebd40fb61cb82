"""Tape-based reverse-mode differentiation over tensor operations.

A `Tape` records primitive applications append-only; `backward` replays the
record in reverse with a fixed accumulation order, so two passes over the
same tape are bit-identical.  Leaves are created with `Tape.variable`;
plain ndarrays passed into ops act as detached constants and never receive
gradient entries.

Complex nodes use the real-loss convention grad(z) = dL/dRe(z) + i*dL/dIm(z),
under which the adjoint of the unnormalized forward DFT is the unnormalized
inverse DFT.

Besides granular primitives, three fused ops (layernorm / mlp2 / afno_mix)
carry the transformer blocks; they save only their inputs and recompute
internals during backward, which keeps peak memory workable for the large
ocean-grid configurations.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from . import fft as _fft
from .tensor import ShapeError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class _Node:
    __slots__ = ("op", "value", "parents", "backward")

    def __init__(self, op, value, parents, backward):
        self.op = op
        self.value = value
        self.parents = parents
        self.backward = backward


class DiffValue:
    """Handle to one recorded tensor on a tape."""

    __slots__ = ("tape", "node_id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.node_id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.node_id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []

    def variable(self, value) -> DiffValue:
        value = np.asarray(value)
        if value.dtype not in (np.float64, np.complex128):
            value = value.astype(np.float64)
        return self._record("leaf", value, (), None)

    def _record(self, op, value, parents, backward) -> DiffValue:
        self.nodes.append(_Node(op, value, parents, backward))
        return DiffValue(self, len(self.nodes) - 1)


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, DiffValue):
            return a.tape
    raise TypeError("no DiffValue argument")


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, DiffValue) else np.asarray(x)


def _pid(x) -> int:
    return x.node_id if isinstance(x, DiffValue) else -1


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _record(tape, op, value, inputs, backward) -> DiffValue:
    return tape._record(op, value, tuple(_pid(x) for x in inputs), backward)


def backward(
    tape: Tape,
    output: DiffValue,
    wanted: Iterable[int] | None = None,
    free: bool = False,
) -> dict[int, np.ndarray]:
    """Gradients of a scalar output w.r.t. every recorded node.

    With `wanted`, only those node ids are kept in the result (gradients of
    intermediates are dropped as soon as they are consumed); with `free`,
    node values and closures are released during the sweep.
    """
    out_val = output.value
    if out_val.shape != ():
        raise ValueError(f"backward needs a scalar output, got shape {out_val.shape}")
    keep = None if wanted is None else set(wanted)
    nodes = tape.nodes
    grads: dict[int, np.ndarray] = {output.node_id: np.ones((), dtype=out_val.dtype)}
    for i in range(output.node_id, -1, -1):
        g = grads.get(i)
        if g is None:
            continue
        node = nodes[i]
        if node.backward is not None:
            parent_grads = node.backward(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pid < 0 or pg is None:
                    continue
                acc = grads.get(pid)
                grads[pid] = pg if acc is None else acc + pg
        if keep is not None and i not in keep:
            del grads[i]
        if free and node.op != "leaf":
            node.value = None
            node.backward = None
    return grads


def grad_check(f: Callable, x: np.ndarray, eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    `f` maps a DiffValue to a scalar DiffValue.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    var = tape.variable(x)
    out = f(var)
    analytic = backward(tape, out).get(var.node_id)
    if analytic is None:
        analytic = np.zeros_like(x)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tape().variable(x)).value)
        flat[i] = orig - eps
        lo = float(f(Tape().variable(x)).value)
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2 * eps)
    denom = np.abs(numeric) + 1e-12
    return float(np.max(np.abs(np.real(analytic) - numeric) / denom))


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> DiffValue:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av + bv

    def bwd(g):
        return (_unbroadcast(_cast(g, av), av.shape), _unbroadcast(_cast(g, bv), bv.shape))

    return _record(tape, "add", out, (a, b), bwd)


def sub(a, b) -> DiffValue:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av - bv

    def bwd(g):
        return (_unbroadcast(_cast(g, av), av.shape), _unbroadcast(_cast(-g, bv), bv.shape))

    return _record(tape, "sub", out, (a, b), bwd)


def neg(a) -> DiffValue:
    tape = _tape_of(a)
    out = -_val(a)
    return _record(tape, "neg", out, (a,), lambda g: (-g,))


def _cast(g, ref: np.ndarray):
    if np.isrealobj(ref) and np.iscomplexobj(g):
        return np.real(g)
    return g


def mul(a, b) -> DiffValue:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av * bv

    def bwd(g):
        ga = _unbroadcast(_cast(g * np.conj(bv), av), av.shape)
        gb = _unbroadcast(_cast(g * np.conj(av), bv), bv.shape)
        return (ga, gb)

    return _record(tape, "mul", out, (a, b), bwd)


def scale(a, c: float) -> DiffValue:
    tape = _tape_of(a)
    out = _val(a) * c
    return _record(tape, "scale", out, (a,), lambda g: (g * np.conj(c),))


def matmul(a, b) -> DiffValue:
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv
    if a2.shape[-1] != b2.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {av.shape} vs {bv.shape}")
    out = np.matmul(a2, b2)
    if bv.ndim == 1:
        out = out[..., 0]
    if av.ndim == 1:
        out = out[..., 0, :] if bv.ndim > 1 else out[..., 0]

    def bwd(g):
        g2 = np.asarray(g)
        if av.ndim == 1 and bv.ndim == 1:
            g2 = g2[None, None]
        elif av.ndim == 1:
            g2 = g2[..., None, :]
        elif bv.ndim == 1:
            g2 = g2[..., None]
        ga = np.matmul(g2, np.conj(np.swapaxes(b2, -1, -2)))
        gb = np.matmul(np.conj(np.swapaxes(a2, -1, -2)), g2)
        if av.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + (av.shape[0],))
        if bv.ndim == 1:
            gb = gb.reshape(gb.shape[:-1])
        return (
            _unbroadcast(_cast(ga, av), av.shape),
            _unbroadcast(_cast(gb, bv), bv.shape),
        )

    return _record(tape, "matmul", out, (a, b), bwd)


def contract(a, b, pairs: Sequence[tuple[int, int]], batch: Sequence[tuple[int, int]] = ()) -> DiffValue:
    from . import tensor as _tensor

    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    pairs = [(ax % av.ndim, bx % bv.ndim) for ax, bx in pairs]
    batch = [(ax % av.ndim, bx % bv.ndim) for ax, bx in batch]
    for ax, bx in pairs + batch:
        if av.shape[ax] != bv.shape[bx]:
            raise ShapeError(
                f"contract: axis {ax} of shape {av.shape} != axis {bx} of shape {bv.shape}"
            )
    letters = iter("abcdefghijklmnopqrstuvwxyz")
    a_sub = [""] * av.ndim
    b_sub = [""] * bv.ndim
    for ax, bx in batch + pairs:
        s = next(letters)
        a_sub[ax] = s
        b_sub[bx] = s
    for sub_ in (a_sub, b_sub):
        for i, s in enumerate(sub_):
            if not s:
                sub_[i] = next(letters)
    touched_a = {ax for ax, _ in batch + pairs}
    touched_b = {bx for _, bx in batch + pairs}
    out_sub = (
        [a_sub[ax] for ax, _ in batch]
        + [s for i, s in enumerate(a_sub) if i not in touched_a]
        + [s for i, s in enumerate(b_sub) if i not in touched_b]
    )
    asub, bsub, osub = "".join(a_sub), "".join(b_sub), "".join(out_sub)
    out = np.einsum(f"{asub},{bsub}->{osub}", av, bv)

    def bwd(g):
        ga = np.einsum(f"{osub},{bsub}->{asub}", g, np.conj(bv))
        gb = np.einsum(f"{osub},{asub}->{bsub}", g, np.conj(av))
        return (_cast(ga, av), _cast(gb, bv))

    return _record(tape, "contract", out, (a, b), bwd)


# ---------------------------------------------------------------------------
# reductions and shape


def tensor_sum(a, axes=None, keepdims: bool = False) -> DiffValue:
    tape = _tape_of(a)
    av = _val(a)
    axes_t = tuple(range(av.ndim)) if axes is None else tuple(ax % av.ndim for ax in axes)
    out = av.sum(axis=axes_t, keepdims=keepdims)

    def bwd(g):
        g2 = np.asarray(g)
        if not keepdims:
            g2 = np.expand_dims(g2, axes_t)
        return (np.broadcast_to(g2, av.shape).copy(),)

    return _record(tape, "sum", out, (a,), bwd)


def tensor_mean(a, axes=None, keepdims: bool = False) -> DiffValue:
    av = _val(a)
    axes_t = tuple(range(av.ndim)) if axes is None else tuple(ax % av.ndim for ax in axes)
    count = int(np.prod([av.shape[ax] for ax in axes_t]))
    return scale(tensor_sum(a, axes_t, keepdims), 1.0 / count)


def stat_var(a, axes=None, keepdims: bool = False) -> DiffValue:
    """Population variance over axes (real input)."""
    m = tensor_mean(a, axes, keepdims=True)
    d = sub(a, m)
    out = tensor_mean(mul(d, d), axes, keepdims)
    return out


def reshape(a, shape) -> DiffValue:
    tape = _tape_of(a)
    av = _val(a)
    out = av.reshape(shape)
    return _record(tape, "reshape", out, (a,), lambda g: (np.asarray(g).reshape(av.shape),))


def transpose(a, perm) -> DiffValue:
    tape = _tape_of(a)
    av = _val(a)
    perm = tuple(perm)
    inv = tuple(np.argsort(perm))
    out = np.transpose(av, perm)
    return _record(tape, "transpose", out, (a,), lambda g: (np.transpose(np.asarray(g), inv),))


def getitem(a, key) -> DiffValue:
    tape = _tape_of(a)
    av = _val(a)
    out = av[key]

    def bwd(g):
        ga = np.zeros_like(av)
        ga[key] = g
        return (ga,)

    return _record(tape, "getitem", out, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> DiffValue:
    tape = _tape_of(a)
    av = _val(a)
    mask = av > 0
    out = np.where(mask, av, 0.0)
    return _record(tape, "relu", out, (a,), lambda g: (np.where(mask, g, 0.0),))


def tanh(a) -> DiffValue:
    tape = _tape_of(a)
    out = np.tanh(_val(a))
    return _record(tape, "tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def identity(a) -> DiffValue:
    tape = _tape_of(a)
    return _record(tape, "identity", _val(a).copy(), (a,), lambda g: (g,))


def _gelu_fwd(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x * x * x)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def gelu(a) -> DiffValue:
    tape = _tape_of(a)
    av = _val(a)
    out = _gelu_fwd(av)
    return _record(tape, "gelu", out, (a,), lambda g: (g * _gelu_grad(av),))


def softshrink(a, lam: float) -> DiffValue:
    """sign(x) * max(|x| - lam, 0); subgradient 0 inside the dead zone,
    boundary included in the dead zone."""
    tape = _tape_of(a)
    av = _val(a)
    mask = np.abs(av) > lam
    out = np.where(mask, av - np.sign(av) * lam, 0.0)
    return _record(tape, "softshrink", out, (a,), lambda g: (np.where(mask, g, 0.0),))


def sqrt(a) -> DiffValue:
    tape = _tape_of(a)
    out = np.sqrt(_val(a))
    return _record(tape, "sqrt", out, (a,), lambda g: (g * 0.5 / out,))


# ---------------------------------------------------------------------------
# complex structure


def real(a) -> DiffValue:
    tape = _tape_of(a)
    out = np.real(_val(a)).copy()
    return _record(tape, "real", out, (a,), lambda g: (np.asarray(g, dtype=np.complex128),))


def imag(a) -> DiffValue:
    tape = _tape_of(a)
    out = np.imag(_val(a)).copy()
    return _record(tape, "imag", out, (a,), lambda g: (1j * np.asarray(g),))


def make_complex(re, im) -> DiffValue:
    tape = _tape_of(re, im)
    rv, iv = _val(re), _val(im)
    out = rv + 1j * iv

    def bwd(g):
        return (
            _unbroadcast(np.real(g), rv.shape),
            _unbroadcast(np.imag(g), iv.shape),
        )

    return _record(tape, "complex", out, (re, im), bwd)


def conj(a) -> DiffValue:
    tape = _tape_of(a)
    out = np.conj(_val(a))
    return _record(tape, "conj", out, (a,), lambda g: (np.conj(g),))


def fft2(a) -> DiffValue:
    """Unnormalized forward 2D DFT; adjoint is the unnormalized inverse."""
    tape = _tape_of(a)
    av = _val(a)
    out = _fft.fft2(av)
    hw = out.shape[-1] * out.shape[-2]

    def bwd(g):
        return (_cast(_fft.ifft2(np.asarray(g)) * hw, av),)

    return _record(tape, "fft2", out, (a,), bwd)


def ifft2(a) -> DiffValue:
    tape = _tape_of(a)
    av = _val(a)
    out = _fft.ifft2(av)
    hw = out.shape[-1] * out.shape[-2]

    def bwd(g):
        return (_cast(_fft.fft2(np.asarray(g)) / hw, av),)

    return _record(tape, "ifft2", out, (a,), bwd)


def embed_spectrum(vals, height: int, width: int) -> DiffValue:
    """Place a (..., mh, mw) low-mode block into a full
    (..., H, W) spectrum with Hermitian-mirrored conjugates, so the inverse
    transform of the result is real for real-signal spectra."""
    tape = _tape_of(vals)
    vv = _val(vals)
    mh, mw = vv.shape[-2], vv.shape[-1]
    if mh > height or mw > width // 2 + 1:
        raise ShapeError(
            f"embed_spectrum: block ({mh},{mw}) exceeds grid ({height},{width})"
        )
    rows = (height - np.arange(mh)) % height
    cols = [w for w in range(1, mw) if (width - w) % width != w]

    def fwd(block):
        out = np.zeros(block.shape[:-2] + (height, width), dtype=np.complex128)
        out[..., :mh, :mw] = block
        for w in cols:
            out[..., rows, width - w] = np.conj(block[..., :, w])
        return out

    out = fwd(vv)

    def bwd(g):
        g = np.asarray(g)
        gv = g[..., :mh, :mw].copy()
        for w in cols:
            gv[..., :, w] += np.conj(g[..., rows, width - w])
        return (gv,)

    return _record(tape, "embed_spectrum", out, (vals,), bwd)


# ---------------------------------------------------------------------------
# fused transformer ops


def layernorm(x, gamma, beta, eps: float = 1e-6) -> DiffValue:
    """Layer normalization over the last axis with scale/shift."""
    tape = _tape_of(x, gamma, beta)
    xv, gv, bv = _val(x), _val(gamma), _val(beta)
    mean = xv.mean(axis=-1, keepdims=True)
    var = xv.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean) * inv
    out = xhat * gv + bv

    def bwd(g):
        g = np.asarray(g)
        ggamma = _unbroadcast(g * xhat, gv.shape)
        gbeta = _unbroadcast(g, bv.shape)
        gx_hat = g * gv
        n = xv.shape[-1]
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return (gx, ggamma, gbeta)

    return _record(tape, "layernorm", out, (x, gamma, beta), bwd)


def mlp2(x, w1, b1, w2, b2) -> DiffValue:
    """Two-layer token-wise MLP with GELU; recomputes the hidden layer in
    backward instead of saving it."""
    tape = _tape_of(x, w1, b1, w2, b2)
    xv, w1v, b1v, w2v, b2v = (_val(v) for v in (x, w1, b1, w2, b2))
    pre = xv @ w1v + b1v
    out = _gelu_fwd(pre) @ w2v + b2v

    def bwd(g):
        g = np.asarray(g)
        pre_ = xv @ w1v + b1v
        h = _gelu_fwd(pre_)
        flat_h = h.reshape(-1, h.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        gw2 = flat_h.T @ flat_g
        gb2 = flat_g.sum(axis=0)
        gh = g @ w2v.T
        gpre = gh * _gelu_grad(pre_)
        flat_x = xv.reshape(-1, xv.shape[-1])
        flat_gpre = gpre.reshape(-1, gpre.shape[-1])
        gw1 = flat_x.T @ flat_gpre
        gb1 = flat_gpre.sum(axis=0)
        gx = gpre @ w1v.T
        return (gx, gw1, gb1, gw2, gb2)

    return _record(tape, "mlp2", out, (x, w1, b1, w2, b2), bwd)


def _block_mix(z, w1, b1, w2, b2, lam):
    """Per-frequency block-diagonal complex 2-layer MLP with a real/imag ReLU
    between and soft-shrink after.  z: (..., nb, bs) complex."""
    h1 = np.einsum("...ki,kio->...ko", z, w1) + b1
    h1 = np.maximum(h1.real, 0.0) + 1j * np.maximum(h1.imag, 0.0)
    h2 = np.einsum("...ki,kio->...ko", h1, w2) + b2
    sr = np.where(np.abs(h2.real) > lam, h2.real - np.sign(h2.real) * lam, 0.0)
    si = np.where(np.abs(h2.imag) > lam, h2.imag - np.sign(h2.imag) * lam, 0.0)
    return sr + 1j * si


def afno_mix(x, w1r, w1i, b1r, b1i, w2r, w2i, b2r, b2i, lam: float, n_blocks: int) -> DiffValue:
    """AFNO Fourier token mixer on a (..., Ht, Wt, d) token grid.

    FFT over the token grid, block-diagonal two-layer complex MLP per
    frequency (ReLU on real/imag parts between the sub-layers), soft-shrink
    sparsification, inverse FFT, real part.  Internals are recomputed during
    backward; only the inputs are retained.
    """
    tape = _tape_of(x, w1r, w1i, b1r, b1i, w2r, w2i, b2r, b2i)
    xv = _val(x)
    w1 = _val(w1r) + 1j * _val(w1i)
    b1 = _val(b1r) + 1j * _val(b1i)
    w2 = _val(w2r) + 1j * _val(w2i)
    b2 = _val(b2r) + 1j * _val(b2i)
    d = xv.shape[-1]
    if d % n_blocks != 0:
        raise ShapeError(f"embed dim {d} not divisible by n_blocks {n_blocks}")
    bs = d // n_blocks
    ht, wt = xv.shape[-3], xv.shape[-2]

    def token_fft(t):
        return np.moveaxis(_fft.fft2(np.moveaxis(t, -1, -3)), -3, -1)

    def token_ifft(t):
        return np.moveaxis(_fft.ifft2(np.moveaxis(t, -1, -3)), -3, -1)

    z = token_fft(xv).reshape(xv.shape[:-1] + (n_blocks, bs))
    s = _block_mix(z, w1, b1, w2, b2, lam)
    out = np.real(token_ifft(s.reshape(xv.shape)))

    def bwd(g):
        g = np.asarray(g)
        # recompute forward internals
        z_ = token_fft(xv).reshape(xv.shape[:-1] + (n_blocks, bs))
        h1pre = np.einsum("...ki,kio->...ko", z_, w1) + b1
        h1 = np.maximum(h1pre.real, 0.0) + 1j * np.maximum(h1pre.imag, 0.0)
        h2 = np.einsum("...ki,kio->...ko", h1, w2) + b2
        # adjoint of real(ifft2(.)): normalized forward transform
        gs = token_fft(g.astype(np.complex128)).reshape(g.shape[:-1] + (n_blocks, bs)) / (ht * wt)
        gh2 = np.where(np.abs(h2.real) > lam, gs.real, 0.0) + 1j * np.where(
            np.abs(h2.imag) > lam, gs.imag, 0.0
        )
        gh2f = gh2.reshape(-1, n_blocks, bs)
        gw2 = np.einsum("bki,bko->kio", np.conj(h1).reshape(-1, n_blocks, bs), gh2f)
        gb2 = gh2f.sum(axis=0)
        gh1 = np.einsum("...ko,kio->...ki", gh2, np.conj(w2))
        gpre = np.where(h1pre.real > 0, gh1.real, 0.0) + 1j * np.where(
            h1pre.imag > 0, gh1.imag, 0.0
        )
        gpref = gpre.reshape(-1, n_blocks, bs)
        gw1 = np.einsum("bki,bko->kio", np.conj(z_).reshape(-1, n_blocks, bs), gpref)
        gb1 = gpref.sum(axis=0)
        gz = np.einsum("...ko,kio->...ki", gpre, np.conj(w1))
        # adjoint of fft2 on a real input: real part of unnormalized inverse
        gx = np.real(token_ifft(gz.reshape(g.shape))) * (ht * wt)
        return (
            gx,
            gw1.real, gw1.imag,
            gb1.real, gb1.imag,
            gw2.real, gw2.imag,
            gb2.real, gb2.imag,
        )

    return _record(tape, "afno_mix", out, (x, w1r, w1i, b1r, b1i, w2r, w2i, b2r, b2i), bwd)
