"""Deterministic named RNG substreams derived from one root seed.

Every source of randomness (init, noise, jitter, shuffling, ...) pulls from
its own named stream, so components stay reproducible independently of each
other: adding draws to one stream never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def substream(seed: int, label: str) -> np.random.Generator:
    """A generator keyed by (seed, label); crc32 keeps labels stable across runs."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK, key]))
