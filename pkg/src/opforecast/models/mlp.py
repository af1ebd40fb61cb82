"""Plain MLP parameter stacks shared by DeepONet branch/trunk nets and the
autoencoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..tensor import ShapeError

_ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "gelu": ad.gelu,
    "identity": ad.identity,
}


def _apply_numpy(activation: str, x: np.ndarray) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    if activation == "tanh":
        return np.tanh(x)
    if activation == "gelu":
        from ..autodiff import _gelu_fwd

        return _gelu_fwd(x)
    return x


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled into [-2 std, 2 std]."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2 * std
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2 * std
    return out


@dataclass
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}w{i}", w))
            out.append((f"{prefix}b{i}", b))
        return out

    def lift(self, tape: ad.Tape) -> "MLPParams":
        """Copy whose arrays are tape variables, for a training step."""
        return MLPParams(
            [tape.variable(w) for w in self.weights],
            [tape.variable(b) for b in self.biases],
            self.activation,
        )

    def forward(self, x):
        """x: (..., in_width) array or DiffValue; activation between layers,
        last layer linear.  Falls back to plain numpy when nothing is taped."""
        xv = x.value if isinstance(x, ad.DiffValue) else np.asarray(x)
        if xv.shape[-1] != self.in_width:
            raise ShapeError(
                f"MLP expects input width {self.in_width}, got {xv.shape[-1]}"
            )
        taped = isinstance(x, ad.DiffValue) or isinstance(self.weights[0], ad.DiffValue)
        last = len(self.weights) - 1
        if not taped:
            h = xv
            for i, (w, b) in enumerate(zip(self.weights, self.biases)):
                h = h @ w + b
                if i != last:
                    h = _apply_numpy(self.activation, h)
            return h
        act = _ACTIVATIONS[self.activation]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i != last:
                h = act(h)
        return h


def init_mlp(
    rng: np.random.Generator,
    widths: list[int],
    activation: str = "tanh",
    std: float = 0.02,
) -> MLPParams:
    weights = [trunc_normal(rng, (widths[i], widths[i + 1]), std) for i in range(len(widths) - 1)]
    biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
    return MLPParams(weights, biases, activation)
