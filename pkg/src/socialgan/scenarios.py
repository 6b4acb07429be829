"""Synthetic interaction scenarios on the 0.4 s grid.

Each generator builds a parameterized multi-person encounter (speeds around
1.2 m/s, typical of the real corpora) and adds small Gaussian positional
jitter. With ``jitter=0`` the geometry is exact, which the bimodal fork
relies on: its ground-truth futures split left/right in strict alternation,
giving exactly two future modes with equal counts.
"""

from __future__ import annotations

import numpy as np

from .data import TIMESTEP, Scene

KINDS = ("meet_head_on", "meet_group", "follow", "meet_angle", "merge", "bimodal_fork")

WALK_SPEED = 1.2  # m/s
FORK_ANGLE = np.deg2rad(35.0)


def _line(start, vel, steps: int) -> np.ndarray:
    t = np.arange(steps)[:, None] * TIMESTEP
    return np.asarray(start, dtype=np.float64) + t * np.asarray(vel, dtype=np.float64)


def _bump(steps: int, center: float, width: float) -> np.ndarray:
    t = np.arange(steps, dtype=np.float64)
    return np.exp(-(((t - center) / width) ** 2))


def _meet_head_on(total: int) -> np.ndarray:
    a = _line((-4.0, 0.0), (WALK_SPEED, 0.0), total)
    b = _line((4.0, 0.2), (-WALK_SPEED, 0.0), total)
    meet = 4.0 / WALK_SPEED / TIMESTEP  # step index where they would collide
    a[:, 1] -= 0.35 * _bump(total, meet, 3.0)
    b[:, 1] += 0.35 * _bump(total, meet, 3.0)
    return np.stack([a, b])


def _meet_group(total: int) -> np.ndarray:
    single = _line((-4.0, 0.0), (WALK_SPEED, 0.0), total)
    pair_a = _line((4.0, 0.25), (-WALK_SPEED, 0.0), total)
    pair_b = _line((4.0, 0.55), (-WALK_SPEED, 0.0), total)
    meet = 4.0 / WALK_SPEED / TIMESTEP
    single[:, 1] -= 0.5 * _bump(total, meet, 3.0)
    pair_a[:, 1] += 0.3 * _bump(total, meet, 3.0)
    pair_b[:, 1] += 0.3 * _bump(total, meet, 3.0)
    return np.stack([single, pair_a, pair_b])


def _follow(total: int) -> np.ndarray:
    leader = _line((-3.0, 0.0), (WALK_SPEED, 0.0), total)
    chaser = _line((-4.5, 0.0), (1.2 * WALK_SPEED, 0.0), total)  # 20% faster, same line
    catch = 1.5 / (0.2 * WALK_SPEED) / TIMESTEP
    chaser[:, 1] -= 0.5 * _bump(total, catch, 3.0)  # overtakes on one side
    return np.stack([leader, chaser])


def _meet_angle(total: int) -> np.ndarray:
    a = _line((-4.0, 0.0), (WALK_SPEED, 0.0), total)
    # b approaches at a right angle and slows to yield near the crossing
    cross = 4.0 / WALK_SPEED / TIMESTEP
    factor = 1.0 - 0.5 * _bump(total, cross + 0.5, 2.5)
    step_len = WALK_SPEED * TIMESTEP * factor
    ys = -4.0 + np.concatenate([[0.0], np.cumsum(step_len[:-1])])
    b = np.column_stack([np.full(total, 0.2), ys])
    return np.stack([a, b])


def _merge(total: int) -> np.ndarray:
    t = np.arange(total, dtype=np.float64)
    decay = np.exp(-t / 5.0)
    xs = -4.0 + WALK_SPEED * TIMESTEP * t
    a = np.column_stack([xs, 0.15 + (1.5 - 0.15) * decay])
    b = np.column_stack([xs, -0.15 + (-1.5 + 0.15) * decay])
    return np.stack([a, b])


def bimodal_fork_branches(t_obs: int, t_pred: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical (left, right) ground-truth futures of the fork, shape (1, t_pred, 2).

    The walker approaches along +x, reaching the fork point (0, 0) at the
    last observed step, then turns +/-35 degrees at unchanged speed.
    """
    left = np.zeros((1, t_pred, 2))
    right = np.zeros((1, t_pred, 2))
    for sign, out in ((1.0, left), (-1.0, right)):
        heading = np.array([np.cos(FORK_ANGLE), sign * np.sin(FORK_ANGLE)])
        steps = np.arange(1, t_pred + 1)[:, None] * (WALK_SPEED * TIMESTEP)
        out[0] = steps * heading
    return left, right


def _bimodal_fork(t_obs: int, t_pred: int, go_left: bool) -> np.ndarray:
    observed = _line((-(t_obs - 1) * WALK_SPEED * TIMESTEP, 0.0), (WALK_SPEED, 0.0), t_obs)
    left, right = bimodal_fork_branches(t_obs, t_pred)
    future = left[0] if go_left else right[0]
    return np.concatenate([observed, future])[None]


def synth_scenarios(kind: str, n: int, rng: np.random.Generator,
                    t_obs: int = 8, t_pred: int = 8, jitter: float = 0.03) -> list[Scene]:
    """Generate ``n`` scenes of one scenario kind with positional jitter."""
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; choose from {KINDS}")
    if n < 1:
        raise ValueError("need n >= 1 scenes")
    total = t_obs + t_pred
    scenes = []
    for idx in range(n):
        if kind == "meet_head_on":
            pos = _meet_head_on(total)
        elif kind == "meet_group":
            pos = _meet_group(total)
        elif kind == "follow":
            pos = _follow(total)
        elif kind == "meet_angle":
            pos = _meet_angle(total)
        elif kind == "merge":
            pos = _merge(total)
        else:
            pos = _bimodal_fork(t_obs, t_pred, go_left=(idx % 2 == 0))
        if jitter > 0:
            pos = pos + rng.normal(0.0, jitter, size=pos.shape)
        scenes.append(Scene(0, list(range(1, pos.shape[0] + 1)), pos, t_obs))
    return scenes
