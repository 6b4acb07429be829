"""Trajectory ingestion: raw annotation files to time-aligned scenes.

On-disk convention: whitespace-separated ``frame ped_id x y`` text lines with
``#`` comments, world coordinates in meters, frame-indexed. A sidecar file
``<stem>.cfg`` next to each data file supplies ``key = value`` metadata, at
minimum ``fps`` (annotation frame rate) and ``name`` (dataset/set name).

All trajectories are resampled onto a shared grid of 0.4-second steps; scenes
are sliding windows of ``t_obs + t_pred`` steps over that grid, and a person
joins a scene only if present at every step of the window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TIMESTEP = 0.4  # seconds between resampled positions

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """A data file line could not be parsed."""


class DataError(ValueError):
    """Parsed data violates an invariant (duplicates, non-finite values, ...)."""


@dataclass(frozen=True)
class RawRecord:
    frame: int
    ped_id: int
    x: float
    y: float


@dataclass
class Trajectory:
    """One pedestrian's positions on the 0.4 s grid, gapless from start_step."""

    ped_id: int
    start_step: int
    positions: np.ndarray  # (length, 2)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise DataError(f"positions must be (length, 2), got {self.positions.shape}")
        if not np.isfinite(self.positions).all():
            raise DataError(f"non-finite position for pedestrian {self.ped_id}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def end_step(self) -> int:
        return self.start_step + len(self) - 1

    @property
    def timestamps(self) -> np.ndarray:
        return (self.start_step + np.arange(len(self))) * TIMESTEP


@dataclass
class Scene:
    """A time-aligned group of pedestrians over one observation+prediction window."""

    start_step: int
    ped_ids: list[int]
    positions: np.ndarray  # (n_people, t_obs + t_pred, 2)
    t_obs: int

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise DataError(f"scene positions must be (n, steps, 2), got {self.positions.shape}")
        if self.positions.shape[0] < 1:
            raise DataError("a scene needs at least one person")
        if len(self.ped_ids) != self.positions.shape[0]:
            raise DataError("one ped_id per person required")
        if not 2 <= self.t_obs < self.positions.shape[1]:
            raise DataError(f"t_obs {self.t_obs} out of range for {self.positions.shape[1]} steps")
        if not np.isfinite(self.positions).all():
            raise DataError("non-finite coordinates in scene")

    @property
    def n_people(self) -> int:
        return self.positions.shape[0]

    @property
    def t_pred(self) -> int:
        return self.positions.shape[1] - self.t_obs

    @property
    def start_time(self) -> float:
        return self.start_step * TIMESTEP

    @property
    def observed(self) -> np.ndarray:
        return self.positions[:, :self.t_obs]

    @property
    def future(self) -> np.ndarray:
        return self.positions[:, self.t_obs:]


def parse_dataset(path) -> list[RawRecord]:
    """Read ``frame ped_id x y`` lines, sorted by (ped_id, frame)."""
    records: list[RawRecord] = []
    seen: set[tuple[int, int]] = set()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected 'frame ped_id x y', got {raw!r}")
            try:
                frame = int(float(fields[0]))
                ped = int(float(fields[1]))
                x, y = float(fields[2]), float(fields[3])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from e
            if not (np.isfinite(x) and np.isfinite(y)):
                raise DataError(f"{path}:{lineno}: non-finite coordinate")
            if (frame, ped) in seen:
                raise DataError(f"{path}:{lineno}: duplicate (frame={frame}, ped={ped})")
            seen.add((frame, ped))
            records.append(RawRecord(frame, ped, x, y))
    records.sort(key=lambda r: (r.ped_id, r.frame))
    return records


def parse_sidecar(path) -> dict[str, str]:
    """Key-value metadata: one ``key = value`` (or ``key value``) pair per line."""
    meta: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, _, value = line.partition("=")
            else:
                key, _, value = line.partition(" ")
            key, value = key.strip(), value.strip()
            if not key or not value:
                raise ParseError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            meta[key] = value
    return meta


def resample(records: Sequence[RawRecord], fps: float) -> list[Trajectory]:
    """Linearly interpolate each pedestrian onto the 0.4 s grid.

    Interpolation stays within each pedestrian's observed span (no
    extrapolation); internal gaps are filled linearly. Pedestrians whose span
    covers fewer than two grid points are dropped (logged as a count).
    """
    if fps <= 0:
        raise ValueError(f"frame rate must be positive, got {fps}")
    by_ped: dict[int, list[RawRecord]] = {}
    for r in records:
        by_ped.setdefault(r.ped_id, []).append(r)

    grid_per_frame = 1.0 / (TIMESTEP * fps)  # grid units per frame
    out: list[Trajectory] = []
    dropped = 0
    for ped_id in sorted(by_ped):
        recs = sorted(by_ped[ped_id], key=lambda r: r.frame)
        if len(recs) < 2:
            dropped += 1
            continue
        u = np.array([r.frame for r in recs], dtype=np.float64) * grid_per_frame
        first = int(np.ceil(u[0] - 1e-9))
        last = int(np.floor(u[-1] + 1e-9))
        if last - first + 1 < 2:
            dropped += 1
            continue
        steps = np.arange(first, last + 1, dtype=np.float64)
        xs = np.interp(steps, u, [r.x for r in recs])
        ys = np.interp(steps, u, [r.y for r in recs])
        out.append(Trajectory(ped_id, first, np.column_stack([xs, ys])))
    if dropped:
        log.warning("resample: dropped %d pedestrian(s) with too short a span", dropped)
    return out


def build_scenes(trajectories: Sequence[Trajectory], t_obs: int, t_pred: int,
                 stride: int = 1) -> list[Scene]:
    """Sliding windows of t_obs + t_pred steps over the shared grid.

    A pedestrian joins a window only if their trajectory covers every step of
    it; windows with no qualifying pedestrian are dropped.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if not trajectories:
        return []
    total = t_obs + t_pred
    lo = min(t.start_step for t in trajectories)
    hi = max(t.end_step for t in trajectories)
    scenes: list[Scene] = []
    for start in range(lo, hi - total + 2, stride):
        ped_ids: list[int] = []
        rows = []
        for traj in trajectories:
            if traj.start_step <= start and traj.end_step >= start + total - 1:
                offset = start - traj.start_step
                ped_ids.append(traj.ped_id)
                rows.append(traj.positions[offset:offset + total])
        if rows:
            scenes.append(Scene(start, ped_ids, np.stack(rows), t_obs))
    return scenes


@dataclass(frozen=True)
class FoldSplit:
    train: tuple[str, ...]
    test: str


def leave_one_out(names: Sequence[str]) -> list[FoldSplit]:
    """One fold per name, holding that name out as the test set."""
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate set names in {list(names)}")
    return [
        FoldSplit(tuple(n for n in names if n != held_out), held_out)
        for held_out in names
    ]


def load_set(data_path, t_obs: int, t_pred: int, stride: int = 1,
             fps: float | None = None) -> tuple[str, list[Scene]]:
    """Parse + resample + window one data file; reads the sidecar if present.

    Without a sidecar the file is assumed to already be on the 0.4 s grid
    (fps = 2.5) and is named after its stem.
    """
    data_path = Path(data_path)
    name = data_path.stem
    if fps is None:
        sidecar = data_path.with_suffix(".cfg")
        fps = 2.5
        if sidecar.exists():
            meta = parse_sidecar(sidecar)
            fps = float(meta.get("fps", fps))
            name = meta.get("name", name)
    trajectories = resample(parse_dataset(data_path), fps)
    return name, build_scenes(trajectories, t_obs, t_pred, stride)


def load_dataset_dir(data_dir, t_obs: int, t_pred: int, stride: int = 1) -> dict[str, list[Scene]]:
    """All ``*.txt`` sets under a directory, keyed by set name."""
    sets: dict[str, list[Scene]] = {}
    paths = sorted(Path(data_dir).glob("*.txt"))
    if not paths:
        raise FileNotFoundError(f"no .txt data files under {data_dir}")
    for p in paths:
        name, scenes = load_set(p, t_obs, t_pred, stride)
        if name in sets:
            raise DataError(f"duplicate set name {name!r} (from {p})")
        sets[name] = scenes
    return sets


def dump_predictions(fh, scene_id: int, sample_id: int, positions: np.ndarray,
                     ped_ids: Sequence[int], t_obs: int) -> None:
    """Append one sample to a prediction dump: ``scene_id sample_id ped_id t x y``.

    ``t`` is the 0-based step index within the scene window, so predicted
    steps run from t_obs to t_obs + t_pred - 1.
    """
    for p, ped in enumerate(ped_ids):
        for t in range(positions.shape[1]):
            x, y = positions[p, t]
            fh.write(f"{scene_id} {sample_id} {ped} {t_obs + t} {x:.6f} {y:.6f}\n")
