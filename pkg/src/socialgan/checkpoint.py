"""Flat binary checkpoint format, version "SGANCKPT/1".

Layout (all ASCII headers, little-endian float64 payloads):

    magic line:  b"SGANCKPT/1\\n"
    per entry:   b"<name> <dim0> [<dim1> ...]\\n"   (one int per axis; a bare
                 name with no dims is a scalar)
                 followed by 8 * prod(dims) payload bytes, row-major

Entries appear in a deterministic order, so identical weights produce
byte-identical files.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

MAGIC = b"SGANCKPT/1\n"


class CheckpointError(ValueError):
    """Bad magic, truncated payload, or malformed entry header."""


def save_checkpoint(path, entries: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in entries.items():
            if " " in name or "\n" in name:
                raise CheckpointError(f"checkpoint key {name!r} may not contain whitespace")
            arr = np.asarray(arr, dtype=np.float64)
            header = " ".join([name] + [str(d) for d in arr.shape])
            fh.write(header.encode("ascii") + b"\n")
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a SGANCKPT/1 checkpoint (magic {magic!r})")
        entries: dict[str, np.ndarray] = {}
        while True:
            header = fh.readline()
            if not header:
                break
            fields = header.decode("ascii").split()
            if not fields:
                raise CheckpointError(f"{path}: empty entry header")
            name, dims = fields[0], tuple(int(d) for d in fields[1:])
            count = int(np.prod(dims)) if dims else 1
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            entries[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    return entries
