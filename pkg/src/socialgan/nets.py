"""MLP and LSTM building blocks, row-batched across the people in a scene.

Every block applies one shared weight set to all rows of its input, which is
what ties the per-person recurrences together: two people with identical
inputs get identical outputs.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Param, Tensor

ACTIVATIONS = ("relu", "linear")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Mlp:
    """Affine layer stack with a relu/linear activation flag per layer.

    Weights are stored (in, out) so a row-batched input (n, in) maps to
    (n, out) with a single matmul per layer.
    """

    def __init__(self, layers: Sequence[tuple[Param, Param]], activations: Sequence[str]):
        if len(layers) != len(activations):
            raise ValueError("one activation flag per layer required")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for (w, b), (w2, _) in zip(layers, layers[1:]):
            if w.shape[1] != w2.shape[0]:
                raise DimensionError(f"layer dims do not chain: {w.shape} -> {w2.shape}")
        for w, b in layers:
            if b.shape != (w.shape[1],):
                raise DimensionError(f"bias shape {b.shape} does not match weight {w.shape}")
        self.layers = list(layers)
        self.activations = list(activations)

    @classmethod
    def build(cls, name: str, dims: Sequence[int], activations: Sequence[str],
              rng: np.random.Generator) -> "Mlp":
        layers = []
        for k, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            w = Param(f"{name}/{k}/w", uniform_init(rng, (d_in, d_out), d_in))
            b = Param(f"{name}/{k}/b", np.zeros(d_out))
            layers.append((w, b))
        return cls(layers, activations)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for (w, b), act in zip(self.layers, self.activations):
            h = ad.add(ad.matmul(h, w.value), b.value)
            if act == "relu":
                h = ad.relu(h)
        return h

    def params(self) -> list[Param]:
        return [p for w, b in self.layers for p in (w, b)]


class LstmState(NamedTuple):
    """Row-batched recurrent state: hidden h and cell memory m, both (n, h)."""

    h: Tensor
    m: Tensor


class LstmCell:
    """Standard LSTM cell with shared weights; gate order i, f, g, o.

    Weight shapes follow the (4h x in) / (4h x h) convention, so each step
    multiplies by the transpose.
    """

    def __init__(self, w_x: Param, w_h: Param, bias: Param):
        hidden = w_h.shape[1]
        if w_x.shape[0] != 4 * hidden or w_h.shape[0] != 4 * hidden or bias.shape != (4 * hidden,):
            raise DimensionError(
                f"inconsistent LSTM shapes: w_x {w_x.shape}, w_h {w_h.shape}, bias {bias.shape}"
            )
        self.w_x = w_x
        self.w_h = w_h
        self.bias = bias
        self.hidden_dim = hidden
        self.input_dim = w_x.shape[1]

    @classmethod
    def build(cls, name: str, input_dim: int, hidden_dim: int,
              rng: np.random.Generator) -> "LstmCell":
        w_x = Param(f"{name}/w_x", uniform_init(rng, (4 * hidden_dim, input_dim), input_dim))
        w_h = Param(f"{name}/w_h", uniform_init(rng, (4 * hidden_dim, hidden_dim), hidden_dim))
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = 1.0  # forget-gate bias, standard trainability aid
        bias = Param(f"{name}/b", b)
        return cls(w_x, w_h, bias)

    def zero_state(self, n: int) -> LstmState:
        return LstmState(ad.zeros((n, self.hidden_dim)), ad.zeros((n, self.hidden_dim)))

    def step(self, state: LstmState, x: Tensor) -> LstmState:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"expected input (n, {self.input_dim}), got {x.shape}")
        h = self.hidden_dim
        gates = ad.add(
            ad.add(ad.matmul(x, ad.transpose(self.w_x.value)),
                   ad.matmul(state.h, ad.transpose(self.w_h.value))),
            self.bias.value,
        )
        i = ad.sigmoid(ad.slice_cols(gates, 0, h))
        f = ad.sigmoid(ad.slice_cols(gates, h, 2 * h))
        g = ad.tanh(ad.slice_cols(gates, 2 * h, 3 * h))
        o = ad.sigmoid(ad.slice_cols(gates, 3 * h, 4 * h))
        m = ad.add(ad.mul(f, state.m), ad.mul(i, g))
        return LstmState(ad.mul(o, ad.tanh(m)), m)

    def params(self) -> list[Param]:
        return [self.w_x, self.w_h, self.bias]


def encode_sequence(cell: LstmCell, embed: Mlp, inputs: Sequence[Tensor]) -> LstmState:
    """Fold the cell over embedded inputs starting from the zero state."""
    if len(inputs) == 0:
        raise ValueError("cannot encode an empty sequence")
    state = cell.zero_state(inputs[0].shape[0])
    for x in inputs:
        state = cell.step(state, embed(x))
    return state
