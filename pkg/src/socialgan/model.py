"""The trajectory GAN: encoder-decoder generator, recurrent discriminator,
adversarial + best-of-k losses, and the alternating training loop.

All forward math is row-batched over the people of a packed scene batch;
scene boundaries matter only to the pooling passes and the per-scene noise
draw. The generator conditions the decoder on the encoded history (and, when
pooling is on, the social context), concatenates the noise vector into the
decoder's initial hidden state, and emits per-step displacements that
accumulate into absolute positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, DimensionError, Param, Tape, Tensor, zero_grads
from .data import Scene
from .nets import LstmCell, LstmState, Mlp
from .pooling import POOL_DIM, CallCounter, GridConfig, SetMaxPool, grid_pool_scenes
from .rng import substream

EMBED_DIM = 16      # coordinate embedding, encoder and decoder sides
ENC_HIDDEN = 16
DEC_HIDDEN = 32
DISC_HIDDEN = 48    # sized above the decoder so the critic is not capacity-starved
MLP_HIDDEN = 64

POOL_MODES = ("none", "once", "per_step", "grid")


class DivergenceError(RuntimeError):
    """Training or decoding produced a non-finite value."""


@dataclass
class SganConfig:
    """Everything that determines a training run apart from the data."""

    t_obs: int = 8
    t_pred: int = 8
    noise_dim: int = 8
    k_variety: int = 1
    pool_mode: str = "once"
    batch_scenes: int = 64
    epochs: int = 200
    lr: float = 0.001
    adv_weight: float = 1.0
    variety_weight: float = 1.0
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.t_obs < 2:
            raise ValueError("t_obs must be >= 2 (displacements need two positions)")
        if self.t_pred < 1:
            raise ValueError("t_pred must be >= 1")
        if not 0 <= self.noise_dim < DEC_HIDDEN:
            raise ValueError(f"noise_dim must lie in [0, {DEC_HIDDEN})")
        if self.k_variety < 1:
            raise ValueError("k_variety must be >= 1")
        if self.pool_mode not in POOL_MODES:
            raise ValueError(f"pool_mode must be one of {POOL_MODES}")
        if self.batch_scenes < 1:
            raise ValueError("batch_scenes must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def with_overrides(self, **kwargs) -> "SganConfig":
        return replace(self, **kwargs)


@dataclass
class PredictionSample:
    """One generator draw for one scene: absolute positions plus the noise
    vector that produced them."""

    positions: np.ndarray  # (n_people, t_pred, 2)
    z: np.ndarray          # (noise_dim,)


def pack_scenes(scenes: Sequence[Scene]) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Concatenate people across scenes; bounds mark each scene's row range."""
    if len(scenes) == 0:
        raise ValueError("need at least one scene")
    total = scenes[0].positions.shape[1]
    t_obs = scenes[0].t_obs
    bounds = []
    cursor = 0
    for s in scenes:
        if s.positions.shape[1] != total or s.t_obs != t_obs:
            raise DimensionError("all scenes in a batch must share t_obs and t_pred")
        bounds.append((cursor, cursor + s.n_people))
        cursor += s.n_people
    return np.concatenate([s.positions for s in scenes]), bounds


def displacements(positions: np.ndarray) -> np.ndarray:
    """Per-step displacement sequence; the first step is defined as (0, 0)."""
    out = np.zeros_like(positions)
    out[:, 1:] = positions[:, 1:] - positions[:, :-1]
    return out


def _disp_constants(positions: np.ndarray) -> list[Tensor]:
    d = displacements(positions)
    return [Tensor(d[:, t]) for t in range(d.shape[1])]


def _tile_per_scene(rows: np.ndarray, bounds) -> np.ndarray:
    """Repeat each scene's row for every person in that scene."""
    out = np.empty((bounds[-1][1], rows.shape[1]))
    for (start, end), r in zip(bounds, rows):
        out[start:end] = r
    return out


def _unpack(arr: np.ndarray, bounds) -> list[np.ndarray]:
    return [arr[start:end] for start, end in bounds]


class Generator:
    """Encoder -> conditioned decoder with pluggable social pooling.

    ``pool_mode`` selects the social-context path:

    * ``none`` — no pooling; the decoder is conditioned on the encoding only.
    * ``once`` — pool encoder hidden states at the end of observation; the
      context enters through the decoder-init MLP.
    * ``per_step`` — additionally to conditioning, re-pool decoder hidden
      states at every prediction step (at the currently *predicted*
      positions) and merge the context into the hidden state residually.
    * ``grid`` — like ``per_step`` but with the untrained occupancy-grid
      kernel; kept for comparison and benchmarking.

    The residual merge means a zeroed pooling path degrades exactly to the
    pool-free decoder, which keeps the modes comparable.
    """

    def __init__(self, cfg: SganConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        cond_dim = DEC_HIDDEN - cfg.noise_dim
        self.enc_embed = Mlp.build("gen/enc_embed", [2, EMBED_DIM], ["relu"], rng)
        self.enc_cell = LstmCell.build("gen/enc_cell", EMBED_DIM, ENC_HIDDEN, rng)
        self.pool_obs = SetMaxPool.build("gen/pool_obs", ENC_HIDDEN, rng)
        self.init_mlp = Mlp.build("gen/init", [POOL_DIM + ENC_HIDDEN, MLP_HIDDEN, cond_dim],
                                  ["relu", "linear"], rng)
        self.dec_embed = Mlp.build("gen/dec_embed", [2, EMBED_DIM], ["relu"], rng)
        self.dec_cell = LstmCell.build("gen/dec_cell", EMBED_DIM, DEC_HIDDEN, rng)
        self.pool_step = SetMaxPool.build("gen/pool_step", DEC_HIDDEN, rng)
        self.merge = Mlp.build("gen/merge", [POOL_DIM + DEC_HIDDEN, MLP_HIDDEN, DEC_HIDDEN],
                               ["relu", "linear"], rng)
        grid_dim = cfg.grid.vector_dim(DEC_HIDDEN)
        self.grid_merge = Mlp.build("gen/grid_merge", [grid_dim + DEC_HIDDEN, MLP_HIDDEN, DEC_HIDDEN],
                                    ["relu", "linear"], rng)
        self.out_head = Mlp.build("gen/out", [DEC_HIDDEN, 2], ["linear"], rng)
        self.pool_counter = CallCounter()

    def params(self) -> list[Param]:
        blocks = [self.enc_embed, self.enc_cell, self.pool_obs, self.init_mlp,
                  self.dec_embed, self.dec_cell, self.pool_step, self.merge,
                  self.grid_merge, self.out_head]
        return [p for b in blocks for p in b.params()]

    # -- forward ----------------------------------------------------------

    def encode(self, obs: np.ndarray) -> Tensor:
        """Final encoder hidden state for every person, (N, ENC_HIDDEN)."""
        disp = displacements(obs)
        state = self.enc_cell.zero_state(obs.shape[0])
        for t in range(obs.shape[1]):
            state = self.enc_cell.step(state, self.enc_embed(Tensor(disp[:, t])))
        return state.h

    def condition(self, obs: np.ndarray, bounds) -> Tensor:
        """Decoder conditioning vector c, (N, DEC_HIDDEN - noise_dim)."""
        h_enc = self.encode(obs)
        if self.cfg.pool_mode == "once":
            pooled = self.pool_obs.pool_scenes(h_enc, Tensor(obs[:, -1]), bounds,
                                               self.pool_counter)
        else:
            pooled = ad.zeros((obs.shape[0], POOL_DIM))
        return self.init_mlp(ad.concat(pooled, h_enc))

    def decode(self, cond: Tensor, z_rows: np.ndarray, obs: np.ndarray,
               bounds) -> tuple[list[Tensor], list[Tensor]]:
        """Roll the decoder for t_pred steps; returns per-step absolute
        positions and displacements, each a list of (N, 2) tensors."""
        n = obs.shape[0]
        h = ad.concat(cond, Tensor(z_rows))
        m = ad.zeros((n, DEC_HIDDEN))
        prev_disp = Tensor(obs[:, -1] - obs[:, -2])
        prev_pos = Tensor(obs[:, -1])
        pos_steps: list[Tensor] = []
        disp_steps: list[Tensor] = []
        for t in range(self.cfg.t_pred):
            e = self.dec_embed(prev_disp)
            if self.cfg.pool_mode == "per_step":
                pooled = self.pool_step.pool_scenes(h, prev_pos, bounds, self.pool_counter)
                h = ad.add(h, self.merge(ad.concat(pooled, h)))
            elif self.cfg.pool_mode == "grid":
                pooled = grid_pool_scenes(h, prev_pos.data, bounds, self.cfg.grid,
                                          self.pool_counter)
                h = ad.add(h, self.grid_merge(ad.concat(pooled, h)))
            h, m = self.dec_cell.step(LstmState(h, m), e)
            step = self.out_head(h)
            prev_pos = ad.add(prev_pos, step)
            if not np.isfinite(prev_pos.data).all():
                raise DivergenceError(f"non-finite prediction at decode step {t}")
            pos_steps.append(prev_pos)
            disp_steps.append(step)
            prev_disp = step
        return pos_steps, disp_steps

    # -- prediction surfaces ----------------------------------------------

    def _check_scene_shapes(self, scenes: Sequence[Scene]) -> None:
        for s in scenes:
            if s.t_obs != self.cfg.t_obs or s.t_pred != self.cfg.t_pred:
                raise DimensionError(
                    f"scene window {s.t_obs}+{s.t_pred} does not match "
                    f"model {self.cfg.t_obs}+{self.cfg.t_pred}"
                )

    def predict_scenes(self, scenes: Sequence[Scene],
                       z: np.ndarray | None = None) -> list[np.ndarray]:
        """Predicted futures per scene; z defaults to zero noise (deterministic)."""
        self._check_scene_shapes(scenes)
        packed, bounds = pack_scenes(scenes)
        if z is None:
            z = np.zeros((len(scenes), self.cfg.noise_dim))
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (len(scenes), self.cfg.noise_dim):
            raise DimensionError(
                f"expected z of shape ({len(scenes)}, {self.cfg.noise_dim}), got {z.shape}"
            )
        self.pool_counter.reset()
        obs = packed[:, :self.cfg.t_obs]
        cond = self.condition(obs, bounds)
        pos_steps, _ = self.decode(cond, _tile_per_scene(z, bounds), obs, bounds)
        stacked = np.stack([p.data for p in pos_steps], axis=1)  # (N, t_pred, 2)
        return _unpack(stacked, bounds)

    def sample(self, scene: Scene, n_samples: int,
               rng: np.random.Generator) -> list[PredictionSample]:
        """Draw n_samples futures for one scene, one fresh z per draw."""
        if n_samples < 1:
            raise ValueError("need n_samples >= 1")
        self._check_scene_shapes([scene])
        packed, bounds = pack_scenes([scene])
        obs = packed[:, :self.cfg.t_obs]
        self.pool_counter.reset()
        cond = self.condition(obs, bounds)  # shared: conditioning is z-free
        out = []
        for _ in range(n_samples):
            z = rng.standard_normal(self.cfg.noise_dim)
            pos_steps, _ = self.decode(cond, _tile_per_scene(z[None], bounds), obs, bounds)
            out.append(PredictionSample(np.stack([p.data for p in pos_steps], axis=1), z))
        return out

    def latent_sweep(self, scene: Scene, direction: np.ndarray,
                     alphas: Sequence[float]) -> list[PredictionSample]:
        """Deterministic predictions along a noise-space ray z = alpha * u."""
        u = np.asarray(direction, dtype=np.float64)
        if u.shape != (self.cfg.noise_dim,):
            raise DimensionError(f"direction must have shape ({self.cfg.noise_dim},), got {u.shape}")
        norm = np.linalg.norm(u)
        if norm == 0.0:
            raise ValueError("latent direction must be non-zero")
        u = u / norm
        out = []
        for alpha in alphas:
            z = alpha * u
            positions = self.predict_scenes([scene], z[None])[0]
            out.append(PredictionSample(positions, z))
        return out


class Discriminator:
    """Recurrent critic: encodes a full-trajectory displacement sequence and
    scores it with an MLP on the final hidden state."""

    def __init__(self, cfg: SganConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = Mlp.build("disc/embed", [2, EMBED_DIM], ["relu"], rng)
        self.cell = LstmCell.build("disc/cell", EMBED_DIM, DISC_HIDDEN, rng)
        self.head = Mlp.build("disc/head", [DISC_HIDDEN, MLP_HIDDEN, 1], ["relu", "linear"], rng)

    def params(self) -> list[Param]:
        return self.embed.params() + self.cell.params() + self.head.params()

    def logits(self, disp_steps: Sequence[Tensor]) -> Tensor:
        """Per-person logits (N, 1) from a full displacement sequence."""
        expected = self.cfg.t_obs + self.cfg.t_pred
        if len(disp_steps) != expected:
            raise DimensionError(f"expected {expected} steps, got {len(disp_steps)}")
        state = self.cell.zero_state(disp_steps[0].shape[0])
        for x in disp_steps:
            state = self.cell.step(state, self.embed(x))
        return self.head(state.h)

    def logits_for_positions(self, positions: np.ndarray) -> Tensor:
        """Score constant trajectories, (n, t_obs + t_pred, 2) -> (n, 1)."""
        positions = np.asarray(positions, dtype=np.float64)
        if positions.ndim != 3 or positions.shape[1] != self.cfg.t_obs + self.cfg.t_pred:
            raise DimensionError(
                f"expected (n, {self.cfg.t_obs + self.cfg.t_pred}, 2), got {positions.shape}"
            )
        return self.logits(_disp_constants(positions))


def build_models(cfg: SganConfig) -> tuple[Generator, Discriminator]:
    """Deterministically initialize both networks from the config seed."""
    rng = substream(cfg.seed, "init")
    return Generator(cfg, rng), Discriminator(cfg, rng)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def person_l2_distances(pos_steps: Sequence[Tensor], gt_future: np.ndarray) -> Tensor:
    """Per-person L2 norm of the stacked position error, (N,)."""
    total = None
    for t, p in enumerate(pos_steps):
        d = ad.sub(p, Tensor(gt_future[:, t]))
        sq_rows = ad.sum(ad.mul(d, d), axis=1)
        total = sq_rows if total is None else ad.add(total, sq_rows)
    return ad.sqrt(total)


def min_over_samples(dists: Sequence[Tensor]) -> Tensor:
    """Per-person minimum over sample distances; gradient flows only through
    the argmin sample (ties: lowest sample index)."""
    if len(dists) == 1:
        return dists[0]
    values = np.stack([d.data for d in dists])       # (k, N)
    pick = np.argmin(values, axis=0)                 # first minimum wins ties
    selected = None
    for s, d in enumerate(dists):
        mask = pick == s
        if not mask.any():
            continue
        term = ad.mul(d, Tensor(mask.astype(np.float64)))
        selected = term if selected is None else ad.add(selected, term)
    return selected


def variety_loss(gt_future: np.ndarray, sample_steps: Sequence[Sequence[Tensor]]) -> Tensor:
    """Best-of-k L2 trajectory loss, averaged over people. k=1 is the plain
    L2 loss."""
    dists = [person_l2_distances(steps, gt_future) for steps in sample_steps]
    return ad.mean(min_over_samples(dists))


def discriminator_loss(disc: Discriminator, real_positions: np.ndarray,
                       fake_positions: np.ndarray) -> Tensor:
    """mean BCE(real, 1) + mean BCE(fake, 0); fakes must already be detached."""
    real = ad.mean(ad.bce_with_logits(disc.logits_for_positions(real_positions), 1))
    fake = ad.mean(ad.bce_with_logits(disc.logits_for_positions(fake_positions), 0))
    return ad.add(real, fake)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_step(gen: Generator, disc: Discriminator, scenes: Sequence[Scene],
               opt_g: Adam, opt_d: Adam, noise_rng: np.random.Generator) -> dict:
    """One discriminator update, then one generator update.

    The discriminator phase scores real trajectories against one fresh,
    detached sample per scene. The generator phase draws k fresh samples,
    applies the non-saturating adversarial loss to all of them, and the
    best-of-k L2 loss across them. Each phase zeroes all grads afterwards, so
    neither phase's update leaks into the other.
    """
    cfg = gen.cfg
    packed, bounds = pack_scenes(scenes)
    obs = packed[:, :cfg.t_obs]
    gt_future = packed[:, cfg.t_obs:]
    all_params = gen.params() + disc.params()

    # discriminator phase: fakes generated off-tape, hence detached
    z_d = noise_rng.standard_normal((len(scenes), cfg.noise_dim))
    cond = gen.condition(obs, bounds)
    fake_steps, _ = gen.decode(cond, _tile_per_scene(z_d, bounds), obs, bounds)
    fake_full = np.concatenate([obs, np.stack([p.data for p in fake_steps], axis=1)], axis=1)

    zero_grads(all_params)
    with Tape() as tape:
        loss_d = discriminator_loss(disc, packed, fake_full)
        if not np.isfinite(loss_d.data):
            raise DivergenceError("discriminator loss is not finite")
        tape.backward(loss_d)
    opt_d.step()
    zero_grads(all_params)

    # generator phase: conditioning is shared across the k samples
    obs_disp = _disp_constants(obs)
    with Tape() as tape:
        cond = gen.condition(obs, bounds)
        adv_terms = []
        sample_steps = []
        for _ in range(cfg.k_variety):
            z = noise_rng.standard_normal((len(scenes), cfg.noise_dim))
            pos_steps, disp_steps = gen.decode(cond, _tile_per_scene(z, bounds), obs, bounds)
            sample_steps.append(pos_steps)
            if cfg.adv_weight != 0.0:
                logits = disc.logits(obs_disp + disp_steps)
                adv_terms.append(ad.mean(ad.bce_with_logits(logits, 1)))
        variety = variety_loss(gt_future, sample_steps)
        if adv_terms:
            acc = adv_terms[0]
            for t in adv_terms[1:]:
                acc = ad.add(acc, t)
            adv = ad.mul(acc, 1.0 / len(adv_terms))
            loss_g = ad.add(ad.mul(adv, cfg.adv_weight), ad.mul(variety, cfg.variety_weight))
            g_adv = float(adv.data)
        else:
            loss_g = ad.mul(variety, cfg.variety_weight)
            g_adv = 0.0
        if not np.isfinite(loss_g.data):
            raise DivergenceError("generator loss is not finite")
        tape.backward(loss_g)
    opt_g.step()
    zero_grads(all_params)

    return {"d_loss": float(loss_d.data), "g_adv": g_adv, "g_variety": float(variety.data)}


def train(gen: Generator, disc: Discriminator, scenes: Sequence[Scene],
          cfg: SganConfig, progress=None) -> list[dict]:
    """Alternating optimization over shuffled scene batches.

    Returns one record per epoch with mean d_loss / g_adv / g_variety.
    ``progress``, if given, is called with each epoch record.
    """
    if len(scenes) == 0:
        raise ValueError("no scenes to train on")
    opt_g = Adam(gen.params(), lr=cfg.lr)
    opt_d = Adam(disc.params(), lr=cfg.lr)
    noise_rng = substream(cfg.seed, "noise")
    shuffle_rng = substream(cfg.seed, "shuffle")
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(scenes))
        sums = {"d_loss": 0.0, "g_adv": 0.0, "g_variety": 0.0}
        n_batches = 0
        for lo in range(0, len(scenes), cfg.batch_scenes):
            batch = [scenes[i] for i in order[lo:lo + cfg.batch_scenes]]
            try:
                rec = train_step(gen, disc, batch, opt_g, opt_d, noise_rng)
            except DivergenceError as e:
                raise DivergenceError(f"epoch {epoch}, batch {n_batches}: {e}") from e
            for k in sums:
                sums[k] += rec[k]
            n_batches += 1
        record = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        history.append(record)
        if progress is not None:
            progress(record)
    return history
