"""Scikit-learn style estimators over the trajectory engine.

Both estimators consume sequences of :class:`~socialgan.data.Scene` and
predict per-scene future positions. They follow the usual conventions:
constructor arguments are stored untouched, fitted state lives in
trailing-underscore attributes, and ``get_params``/``set_params`` come from
``BaseEstimator``, so they compose with clone/grid-search style tooling.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DataError, Scene
from .metrics import ade
from .model import (
    POOL_MODES,
    PredictionSample,
    SganConfig,
    build_models,
    train,
)
from .pooling import GridConfig
from .rng import substream


def check_scenes(X, t_obs: int | None = None, t_pred: int | None = None) -> list[Scene]:
    """Validate an input corpus: a non-empty sequence of Scene objects whose
    windows match the estimator's horizon settings."""
    if isinstance(X, Scene):
        raise TypeError("pass a sequence of scenes, e.g. [scene], not a bare Scene")
    scenes = list(X)
    if not scenes:
        raise ValueError("need at least one scene")
    for s in scenes:
        if not isinstance(s, Scene):
            raise TypeError(f"expected Scene, got {type(s).__name__}")
        if t_obs is not None and s.t_obs != t_obs:
            raise DataError(f"scene has t_obs={s.t_obs}, estimator expects {t_obs}")
        if t_pred is not None and s.t_pred != t_pred:
            raise DataError(f"scene has t_pred={s.t_pred}, estimator expects {t_pred}")
    return scenes


class SocialGanForecaster(BaseEstimator):
    """Adversarially trained multimodal trajectory forecaster.

    Parameters
    ----------
    t_obs, t_pred : int
        Observed / predicted horizon in 0.4 s steps.
    noise_dim : int
        Size of the latent noise vector (one draw per scene, shared by all
        people in it). 0 makes the generator deterministic.
    k_variety : int
        Samples drawn per scene during training; the L2 term penalizes only
        the best of the k, which pushes the sampler to cover modes.
    pool_mode : {"none", "once", "per_step", "grid"}
        Social pooling: off, once at the end of observation, recomputed at
        every prediction step, or the untrained occupancy-grid baseline.
    batch_scenes, epochs, lr : training loop shape.
    adv_weight, variety_weight : loss term weights; adv_weight=0 trains a
        plain L2 sequence model (the discriminator still trains but does not
        influence the generator).
    grid_neighborhood, grid_cells : occupancy-grid geometry (pool_mode="grid").
    seed : int
        Root seed; init, noise, and shuffling use independent substreams.
    """

    def __init__(self, t_obs=8, t_pred=8, noise_dim=8, k_variety=1, pool_mode="once",
                 batch_scenes=64, epochs=200, lr=0.001, adv_weight=1.0,
                 variety_weight=1.0, grid_neighborhood=4.0, grid_cells=8, seed=0):
        self.t_obs = t_obs
        self.t_pred = t_pred
        self.noise_dim = noise_dim
        self.k_variety = k_variety
        self.pool_mode = pool_mode
        self.batch_scenes = batch_scenes
        self.epochs = epochs
        self.lr = lr
        self.adv_weight = adv_weight
        self.variety_weight = variety_weight
        self.grid_neighborhood = grid_neighborhood
        self.grid_cells = grid_cells
        self.seed = seed

    def _config(self) -> SganConfig:
        return SganConfig(
            t_obs=self.t_obs, t_pred=self.t_pred, noise_dim=self.noise_dim,
            k_variety=self.k_variety, pool_mode=self.pool_mode,
            batch_scenes=self.batch_scenes, epochs=self.epochs, lr=self.lr,
            adv_weight=self.adv_weight, variety_weight=self.variety_weight,
            seed=self.seed, grid=GridConfig(self.grid_neighborhood, self.grid_cells),
        )

    def _init_models(self) -> "SocialGanForecaster":
        self.generator_, self.discriminator_ = build_models(self._config())
        self.history_ = []
        return self

    def fit(self, X, y=None, progress=None):
        """Adversarially train on a scene corpus; y is ignored (scenes carry
        their own ground-truth futures)."""
        scenes = check_scenes(X, self.t_obs, self.t_pred)
        self._init_models()
        self.history_ = train(self.generator_, self.discriminator_, scenes,
                              self._config(), progress=progress)
        return self

    def predict(self, X) -> list[np.ndarray]:
        """Zero-noise prediction per scene, each (n_people, t_pred, 2)."""
        check_is_fitted(self)
        scenes = check_scenes(X, self.t_obs, self.t_pred)
        return self.generator_.predict_scenes(scenes)

    def sample(self, X, n_samples: int = 1, seed: int | None = None) -> list[list[PredictionSample]]:
        """Draw n_samples stochastic futures per scene.

        Deterministic for fixed (estimator seed, ``seed``): repeated calls
        return identical samples.
        """
        check_is_fitted(self)
        scenes = check_scenes(X, self.t_obs, self.t_pred)
        rng = substream(self.seed if seed is None else seed, "sample")
        return [self.generator_.sample(s, n_samples, rng) for s in scenes]

    def score(self, X, y=None) -> float:
        """Negative mean scene ADE of the zero-noise prediction (higher is better)."""
        scenes = check_scenes(X, self.t_obs, self.t_pred)
        preds = self.predict(scenes)
        return -float(np.mean([ade(s.future, p) for s, p in zip(scenes, preds)]))

    # -- persistence --------------------------------------------------------

    _META_FIELDS = ("t_obs", "t_pred", "noise_dim", "k_variety", "batch_scenes",
                    "epochs", "lr", "adv_weight", "variety_weight",
                    "grid_neighborhood", "grid_cells", "seed")

    def save(self, path) -> None:
        """Write config metadata plus all weights as a SGANCKPT/1 file."""
        check_is_fitted(self)
        entries: dict[str, np.ndarray] = {}
        for name in self._META_FIELDS:
            entries[f"meta/{name}"] = np.asarray(float(getattr(self, name)))
        entries["meta/pool_mode"] = np.asarray(float(POOL_MODES.index(self.pool_mode)))
        for p in self.generator_.params() + self.discriminator_.params():
            entries[p.name] = p.value.data
        save_checkpoint(path, entries)

    @classmethod
    def load(cls, path) -> "SocialGanForecaster":
        """Rebuild a fitted estimator from a checkpoint, validating shapes."""
        entries = load_checkpoint(path)
        kwargs = {}
        for name in cls._META_FIELDS:
            key = f"meta/{name}"
            if key not in entries:
                raise CheckpointError(f"{path}: missing {key}")
            value = float(entries[key])
            kwargs[name] = value if name in ("lr", "adv_weight", "variety_weight",
                                             "grid_neighborhood") else int(value)
        mode_idx = int(float(entries.get("meta/pool_mode", -1)))
        if not 0 <= mode_idx < len(POOL_MODES):
            raise CheckpointError(f"{path}: bad pool_mode index {mode_idx}")
        est = cls(pool_mode=POOL_MODES[mode_idx], **kwargs)
        est._init_models()
        for p in est.generator_.params() + est.discriminator_.params():
            if p.name not in entries:
                raise CheckpointError(f"{path}: missing weights for {p.name!r}")
            arr = entries[p.name]
            if arr.shape != p.value.data.shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {p.name!r}: "
                    f"checkpoint {arr.shape}, model {p.value.data.shape}"
                )
            p.value.data = arr.copy()
        return est


class LinearForecaster(BaseEstimator):
    """Per-person least-squares line fit over the observed steps, extrapolated.

    There is nothing to learn across scenes, so ``fit`` only validates and
    marks the estimator fitted.
    """

    def __init__(self, t_obs=8, t_pred=8):
        self.t_obs = t_obs
        self.t_pred = t_pred

    def fit(self, X=None, y=None):
        if X is not None:
            check_scenes(X, self.t_obs, self.t_pred)
        self.fitted_ = True
        return self

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self)
        scenes = check_scenes(X, self.t_obs, self.t_pred)
        out = []
        for scene in scenes:
            obs = scene.observed  # (n, t_obs, 2)
            n = obs.shape[0]
            t_fit = np.arange(self.t_obs, dtype=np.float64)
            coeffs = np.polyfit(t_fit, obs.transpose(1, 0, 2).reshape(self.t_obs, n * 2), 1)
            t_new = np.arange(self.t_obs, self.t_obs + self.t_pred, dtype=np.float64)
            pred = np.outer(t_new, coeffs[0]) + coeffs[1]
            out.append(pred.reshape(self.t_pred, n, 2).transpose(1, 0, 2))
        return out

    def score(self, X, y=None) -> float:
        scenes = check_scenes(X, self.t_obs, self.t_pred)
        preds = self.predict(scenes)
        return -float(np.mean([ade(s.future, p) for s, p in zip(scenes, preds)]))
