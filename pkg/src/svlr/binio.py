"""Little-endian binary container helpers shared by the model file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO, Sequence

import numpy as np


def write_header(fh: BinaryIO, magic: bytes, dims: Sequence[int]) -> None:
    fh.write(magic)
    fh.write(struct.pack(f"<{len(dims)}I", *dims))


def read_header(fh: BinaryIO, magic: bytes, n_dims: int, what: str) -> tuple[int, ...]:
    got = fh.read(len(magic))
    if got != magic:
        raise ValueError(f"bad magic for {what}: expected {magic!r}, got {got!r}")
    raw = fh.read(4 * n_dims)
    if len(raw) != 4 * n_dims:
        raise ValueError(f"truncated header in {what}")
    return struct.unpack(f"<{n_dims}I", raw)


def write_f64(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_f64(fh: BinaryIO, count: int, what: str) -> np.ndarray:
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError(f"truncated payload in {what}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)
