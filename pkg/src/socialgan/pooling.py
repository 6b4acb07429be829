"""Social-context pooling.

Two aggregators over the other people in a scene:

* ``SetMaxPool`` — the learned mechanism: each neighbor's relative position
  is embedded, concatenated with that neighbor's hidden state, pushed through
  a shared per-pair MLP, and the rows are max-pooled elementwise. Symmetric in
  the neighbors and blind to rigid translations, but *not* to distance: any
  person in the scene can move the max.
* ``grid_pool`` — the occupancy-grid comparison kernel: neighbors' hidden
  states are summed into the cells of a fixed-size grid centered on the
  target. People outside the neighborhood contribute exactly nothing. Kept
  untrained, for contrast and benchmarking only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Param, Tensor
from .nets import Mlp

POOL_DIM = 32
POS_EMBED_DIM = 16
PAIR_HIDDEN = 64


class CallCounter:
    """Counts pooling passes; one pass = one pooling sweep over a batch."""

    def __init__(self):
        self.count = 0

    def add(self, n: int = 1) -> None:
        self.count += n

    def reset(self) -> None:
        self.count = 0


def relative_positions(positions, i: int) -> np.ndarray:
    """Positions of everyone else relative to person i, order preserved."""
    pos = np.asarray(positions, dtype=np.float64)
    if not 0 <= i < pos.shape[0]:
        raise IndexError(f"person index {i} out of range for {pos.shape[0]} people")
    others = np.concatenate([pos[:i], pos[i + 1:]])
    return others - pos[i]


class SetMaxPool:
    """Relative-position MLP rows max-pooled into one context vector per person."""

    def __init__(self, pos_embed: Mlp, pair_mlp: Mlp):
        if pair_mlp.in_dim <= pos_embed.out_dim:
            raise DimensionError("pair MLP must take the position embedding plus a hidden state")
        self.pos_embed = pos_embed
        self.pair_mlp = pair_mlp
        self.hidden_dim = pair_mlp.in_dim - pos_embed.out_dim

    @classmethod
    def build(cls, name: str, hidden_dim: int, rng: np.random.Generator,
              out_dim: int = POOL_DIM) -> "SetMaxPool":
        pos_embed = Mlp.build(f"{name}/pos_embed", [2, POS_EMBED_DIM], ["relu"], rng)
        pair_mlp = Mlp.build(f"{name}/pair", [POS_EMBED_DIM + hidden_dim, PAIR_HIDDEN, out_dim],
                             ["relu", "relu"], rng)
        return cls(pos_embed, pair_mlp)

    @property
    def out_dim(self) -> int:
        return self.pair_mlp.out_dim

    def pool_one(self, hidden: Tensor, positions: Tensor, i: int) -> Tensor:
        """Context vector for person i; the zero vector when i is alone."""
        n = hidden.shape[0]
        if positions.shape[0] != n:
            raise DimensionError(f"{n} hidden states but {positions.shape[0]} positions")
        if not 0 <= i < n:
            raise IndexError(f"person index {i} out of range for {n} people")
        if n == 1:
            return ad.zeros(self.out_dim)
        others = [j for j in range(n) if j != i]
        rel = ad.sub(ad.gather_rows(positions, others), ad.row(positions, i))
        rows = self.pair_mlp(ad.concat(self.pos_embed(rel), ad.gather_rows(hidden, others)))
        return ad.max_rows(rows)

    def pool_scenes(self, hidden: Tensor, positions: Tensor,
                    bounds: Sequence[tuple[int, int]],
                    counter: CallCounter | None = None) -> Tensor:
        """One pooling pass over a packed batch: a (N, out_dim) context matrix."""
        if counter is not None:
            counter.add()
        rows = []
        for start, end in bounds:
            n = end - start
            if n == 1:
                rows.append(ad.zeros(self.out_dim))
                continue
            h = ad.gather_rows(hidden, range(start, end))
            p = ad.gather_rows(positions, range(start, end))
            rows.extend(self.pool_one(h, p, i) for i in range(n))
        return ad.stack_rows(rows)

    def params(self) -> list[Param]:
        return self.pos_embed.params() + self.pair_mlp.params()


@dataclass(frozen=True)
class GridConfig:
    """Square neighborhood of ``neighborhood`` meters split into cells x cells."""

    neighborhood: float = 4.0
    cells: int = 8

    def __post_init__(self):
        if self.neighborhood <= 0:
            raise ValueError("neighborhood must be positive")
        if self.cells < 1:
            raise ValueError("need at least one grid cell")

    def vector_dim(self, hidden_dim: int) -> int:
        return self.cells * self.cells * hidden_dim


def grid_pool(hidden: Tensor, positions, i: int, cfg: GridConfig) -> Tensor:
    """Sum neighbors' hidden states into person i's occupancy grid.

    Output is flattened cell-major: the block for cell (cx, cy) starts at
    (cx * cells + cy) * hidden_dim. Gradients flow to the contributing hidden
    rows; positions only select buckets.
    """
    hd = hidden.data
    pos = np.asarray(positions, dtype=np.float64)
    n, h_dim = hd.shape
    if pos.shape != (n, 2):
        raise DimensionError(f"{n} hidden states but positions shaped {pos.shape}")
    if not 0 <= i < n:
        raise IndexError(f"person index {i} out of range for {n} people")
    half = cfg.neighborhood / 2.0
    cell_size = cfg.neighborhood / cfg.cells
    out = np.zeros(cfg.vector_dim(h_dim))
    contributions = []  # (cell, j) pairs, for the backward scatter
    for j in range(n):
        if j == i:
            continue
        off = pos[j] - pos[i]
        if not (-half <= off[0] < half and -half <= off[1] < half):
            continue
        cx = int((off[0] + half) // cell_size)
        cy = int((off[1] + half) // cell_size)
        cell = min(cx, cfg.cells - 1) * cfg.cells + min(cy, cfg.cells - 1)
        out[cell * h_dim:(cell + 1) * h_dim] += hd[j]
        contributions.append((cell, j))
    out_t = Tensor(out)

    def backward(g):
        z = np.zeros_like(hd)
        for cell, j in contributions:
            z[j] += g[cell * h_dim:(cell + 1) * h_dim]
        return (z,)

    ad._record(out_t, (hidden,), backward)
    return out_t


def grid_pool_scenes(hidden: Tensor, positions, bounds: Sequence[tuple[int, int]],
                     cfg: GridConfig, counter: CallCounter | None = None) -> Tensor:
    """One grid-pooling pass over a packed batch."""
    if counter is not None:
        counter.add()
    pos = np.asarray(positions, dtype=np.float64)
    rows = []
    for start, end in bounds:
        h = ad.gather_rows(hidden, range(start, end))
        rows.extend(grid_pool(h, pos[start:end], i, cfg) for i in range(end - start))
    return ad.stack_rows(rows)
