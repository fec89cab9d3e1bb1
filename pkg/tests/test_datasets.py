"""Dataset container invariants and (de)serialization round trips."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from essr.datasets import (
    BadHeaderError,
    BadMagicError,
    DimensionMismatchError,
    SnapshotDataset,
    TruncatedPayloadError,
    read_dataset,
    read_dataset_csv,
    write_dataset,
    write_dataset_csv,
)


def _sample(dim=2, m=7, h=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    return SnapshotDataset(dim=dim, h=h, Z=rng.normal(size=(m, dim)),
                           X=rng.normal(size=(m, dim)))


def test_container_validation():
    with pytest.raises(ValueError):
        SnapshotDataset(dim=1, h=0.0, Z=np.zeros((3, 1)), X=np.zeros((3, 1)))
    with pytest.raises(DimensionMismatchError):
        SnapshotDataset(dim=1, h=1e-3, Z=np.zeros((3, 1)), X=np.zeros((4, 1)))
    with pytest.raises(DimensionMismatchError):
        SnapshotDataset(dim=2, h=1e-3, Z=np.zeros((3, 1)), X=np.zeros((3, 1)))
    with pytest.raises(ValueError):
        SnapshotDataset(dim=1, h=1e-3, Z=np.array([[np.nan]]), X=np.zeros((1, 1)))


def test_container_promotes_1d_arrays():
    d = SnapshotDataset(dim=1, h=1e-3, Z=np.arange(3.0), X=np.arange(3.0))
    assert d.Z.shape == (3, 1)
    assert d.n_samples == 3


def test_binary_roundtrip(tmp_path):
    d = _sample()
    path = tmp_path / "d.essr"
    write_dataset(path, d)
    r = read_dataset(path)
    assert r.dim == d.dim and r.h == d.h
    np.testing.assert_array_equal(r.Z, d.Z)
    np.testing.assert_array_equal(r.X, d.X)


@settings(max_examples=25, deadline=None)
@given(
    dim=st.integers(1, 4),
    m=st.integers(1, 40),
    h=st.floats(1e-6, 1.0, allow_nan=False),
    seed=st.integers(0, 2**31),
)
def test_binary_roundtrip_property(tmp_path_factory, dim, m, h, seed):
    d = _sample(dim=dim, m=m, h=h, seed=seed)
    path = tmp_path_factory.mktemp("rt") / "d.essr"
    write_dataset(path, d)
    r = read_dataset(path)
    assert (r.dim, r.h, r.n_samples) == (d.dim, d.h, d.n_samples)
    np.testing.assert_array_equal(r.Z, d.Z)
    np.testing.assert_array_equal(r.X, d.X)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"NOPE" + b"\0" * 100)
    with pytest.raises(BadMagicError):
        read_dataset(path)


def test_short_header(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(b"ES")
    with pytest.raises(BadHeaderError):
        read_dataset(path)


def test_bad_header_fields(tmp_path):
    header = struct.Struct("<4sIIQd")
    path = tmp_path / "zero-dim"
    path.write_bytes(header.pack(b"ESSR", 1, 0, 1, 1e-3))
    with pytest.raises(BadHeaderError):
        read_dataset(path)
    path2 = tmp_path / "bad-version"
    path2.write_bytes(header.pack(b"ESSR", 99, 1, 1, 1e-3))
    with pytest.raises(BadHeaderError):
        read_dataset(path2)


def test_truncated_payload(tmp_path):
    d = _sample()
    path = tmp_path / "trunc"
    write_dataset(path, d)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(TruncatedPayloadError):
        read_dataset(path)


def test_csv_roundtrip(tmp_path):
    d = _sample(dim=3, m=11)
    path = tmp_path / "d.csv"
    write_dataset_csv(path, d)
    header = path.read_text().splitlines()[0]
    assert header == "z1,z2,z3,x1,x2,x3"
    r = read_dataset_csv(path, d.h)
    assert r.dim == 3
    np.testing.assert_allclose(r.Z, d.Z, rtol=0, atol=0)
    np.testing.assert_allclose(r.X, d.X, rtol=0, atol=0)


def test_csv_odd_columns(tmp_path):
    path = tmp_path / "odd.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DimensionMismatchError):
        read_dataset_csv(path, 1e-3)
