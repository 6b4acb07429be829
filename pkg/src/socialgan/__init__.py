"""Socially-aware GAN trajectory forecasting at desk scale.

A self-contained implementation: dense-tensor autodiff (:mod:`autodiff`),
MLP/LSTM blocks (:mod:`nets`), permutation-invariant social pooling plus the
occupancy-grid baseline (:mod:`pooling`), the generator/discriminator pair
with best-of-k training (:mod:`model`), data and metrics plumbing
(:mod:`data`, :mod:`metrics`, :mod:`scenarios`), and sklearn-style
estimators (:mod:`estimators`).
"""

from .autodiff import (
    Adam,
    DimensionError,
    Param,
    Tape,
    Tensor,
    finite_diff_check,
    zero_grads,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    DataError,
    FoldSplit,
    ParseError,
    RawRecord,
    Scene,
    Trajectory,
    build_scenes,
    leave_one_out,
    parse_dataset,
    resample,
)
from .estimators import LinearForecaster, SocialGanForecaster, check_scenes
from .metrics import MetricsReport, ade, collision_rate, fde, min_of_n
from .model import (
    Discriminator,
    DivergenceError,
    Generator,
    PredictionSample,
    SganConfig,
    build_models,
    train,
    train_step,
)
from .pooling import GridConfig, SetMaxPool, grid_pool, relative_positions
from .rng import substream
from .scenarios import synth_scenarios

__version__ = "0.1.0"

__all__ = [
    "Adam", "DimensionError", "Param", "Tape", "Tensor", "finite_diff_check",
    "zero_grads", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "DataError", "FoldSplit", "ParseError", "RawRecord", "Scene", "Trajectory",
    "build_scenes", "leave_one_out", "parse_dataset", "resample",
    "LinearForecaster", "SocialGanForecaster", "check_scenes",
    "MetricsReport", "ade", "collision_rate", "fde", "min_of_n",
    "Discriminator", "DivergenceError", "Generator", "PredictionSample",
    "SganConfig", "build_models", "train", "train_step",
    "GridConfig", "SetMaxPool", "grid_pool", "relative_positions",
    "substream", "synth_scenarios",
]
