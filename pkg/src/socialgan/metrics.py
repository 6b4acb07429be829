"""Displacement-error metrics and the collision check.

All metrics take ground-truth and predicted futures shaped (n_people,
t_pred, 2) in meters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import DimensionError


def _check_pair(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape or gt.ndim != 3 or gt.shape[2] != 2:
        raise DimensionError(f"future shapes must match as (n, t, 2): {gt.shape} vs {pred.shape}")
    return gt, pred


def ade(gt, pred) -> float:
    """Mean Euclidean distance over all people and predicted steps."""
    gt, pred = _check_pair(gt, pred)
    return float(np.mean(np.linalg.norm(pred - gt, axis=2)))


def fde(gt, pred) -> float:
    """Mean Euclidean distance at the final predicted step only."""
    gt, pred = _check_pair(gt, pred)
    return float(np.mean(np.linalg.norm(pred[:, -1] - gt[:, -1], axis=1)))


def min_of_n(metric: Callable, gt, samples: Sequence) -> float:
    """Best metric value over N samples of one scene (ties: lowest index)."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    return min(metric(gt, s) for s in samples)


def collision_rate(predictions: Sequence[np.ndarray], threshold: float = 0.10) -> float:
    """Fraction of scenes where any two people pass within ``threshold`` meters
    of each other at the same predicted step."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(predictions) == 0:
        return 0.0
    hits = 0
    for pred in predictions:
        pred = np.asarray(pred, dtype=np.float64)
        n = pred.shape[0]
        if n < 2:
            continue
        # pairwise distances at each step: (t, n, n)
        diff = pred.transpose(1, 0, 2)[:, :, None, :] - pred.transpose(1, 0, 2)[:, None, :, :]
        dist = np.linalg.norm(diff, axis=3)
        iu = np.triu_indices(n, k=1)
        if (dist[:, iu[0], iu[1]] < threshold).any():
            hits += 1
    return hits / len(predictions)


@dataclass
class MetricsReport:
    """Aggregate evaluation result for one model on one scene corpus."""

    ade: float
    fde: float
    collision_rate: float
    n_scenes: int
    n_people: int
    seconds: float

    def __post_init__(self):
        if self.ade < 0 or self.fde < 0:
            raise ValueError("displacement errors cannot be negative")
        if not 0.0 <= self.collision_rate <= 1.0:
            raise ValueError("collision rate must lie in [0, 1]")
