"""Snapshot-pair dataset container and its binary / CSV serialization.

Binary layout (little-endian): magic "ESSR" | version u32 | dim u32 |
M u64 | h f64 | Z payload (M*dim f64) | X payload (M*dim f64).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "SnapshotDataset",
    "DatasetFormatError",
    "BadMagicError",
    "BadHeaderError",
    "TruncatedPayloadError",
    "DimensionMismatchError",
    "write_dataset",
    "read_dataset",
    "write_dataset_csv",
    "read_dataset_csv",
]

_MAGIC = b"ESSR"
_VERSION = 1
_HEADER = struct.Struct("<4sIIQd")


class DatasetFormatError(ValueError):
    """Base for dataset (de)serialization failures."""


class BadMagicError(DatasetFormatError):
    pass


class BadHeaderError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


class DimensionMismatchError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class SnapshotDataset:
    """Paired states at t=0 (Z) and t=h (X), each of shape (M, dim)."""

    dim: int
    h: float
    Z: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        z = np.ascontiguousarray(np.asarray(self.Z, dtype=np.float64))
        x = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        if z.ndim == 1:
            z = z[:, None]
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "Z", z)
        object.__setattr__(self, "X", x)
        if self.h <= 0.0:
            raise ValueError(f"h must be > 0, got {self.h}")
        if z.shape != x.shape:
            raise DimensionMismatchError(
                f"Z shape {z.shape} != X shape {x.shape}"
            )
        if z.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"arrays have {z.shape[1]} columns, dim is {self.dim}"
            )
        if not (np.isfinite(z).all() and np.isfinite(x).all()):
            raise ValueError("dataset entries must all be finite")

    @property
    def n_samples(self) -> int:
        return self.Z.shape[0]


def write_dataset(path: Union[str, Path], data: SnapshotDataset) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, data.dim, data.n_samples, data.h))
        f.write(data.Z.astype("<f8").tobytes())
        f.write(data.X.astype("<f8").tobytes())


def read_dataset(path: Union[str, Path]) -> SnapshotDataset:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise BadHeaderError(f"file too short for header ({len(raw)} bytes)")
        magic, version, dim, m, h = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        if version != _VERSION:
            raise BadHeaderError(f"unsupported version {version}")
        if dim < 1 or h <= 0.0:
            raise BadHeaderError(f"invalid header fields dim={dim} h={h}")
        payload = f.read()
    need = 2 * m * dim * 8
    if len(payload) < need:
        raise TruncatedPayloadError(
            f"payload has {len(payload)} bytes, expected {need}"
        )
    flat = np.frombuffer(payload[:need], dtype="<f8")
    z = flat[: m * dim].reshape(m, dim)
    x = flat[m * dim :].reshape(m, dim)
    return SnapshotDataset(dim=dim, h=h, Z=z.copy(), X=x.copy())


def write_dataset_csv(path: Union[str, Path], data: SnapshotDataset) -> None:
    n = data.dim
    header = ",".join([f"z{i + 1}" for i in range(n)] + [f"x{i + 1}" for i in range(n)])
    np.savetxt(
        path,
        np.hstack([data.Z, data.X]),
        delimiter=",",
        header=header,
        comments="",
        fmt="%.17g",
    )


def read_dataset_csv(path: Union[str, Path], h: float) -> SnapshotDataset:
    """CSV alternate: one header row, 2n columns z1..zn,x1..xn."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] % 2 != 0:
        raise DimensionMismatchError(
            f"CSV must have an even column count, got {arr.shape[1]}"
        )
    n = arr.shape[1] // 2
    return SnapshotDataset(dim=n, h=h, Z=arr[:, :n], X=arr[:, n:])
