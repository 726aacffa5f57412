"""Checkpoint format: bit-exact round trips and refusal of damaged files."""

import struct

import numpy as np
import pytest

from tmera.checkpoint import (
    CheckpointFormatError,
    CheckpointGeometryError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    checkpoint_load,
    checkpoint_save,
)
from tmera.state import MeraGeometry, expand_dense, init_product, random_state


def roundtrip(tmp_path, state, meta=None):
    p = tmp_path / "state.chk"
    checkpoint_save(state, p, meta=meta)
    return checkpoint_load(p, with_meta=True)


def test_round_trip_is_bit_exact(tmp_path):
    g = MeraGeometry(ell=3, d=2, m=4)
    for ti in (False, True):
        st = random_state(g, np.random.default_rng(13), ti=ti)
        st2, meta = roundtrip(tmp_path, st, meta={"step": 5, "time": 0.5})
        assert meta == {"step": 5, "time": 0.5}
        assert st2.ti == ti
        assert st2.geometry.ell == g.ell and st2.geometry.m == g.m
        assert np.array_equal(st.lam, st2.lam)
        for a, b in zip(st.stored_tensors(), st2.stored_tensors()):
            assert a[:3] == b[:3]
            assert np.array_equal(a[3].array, b[3].array)  # exact, not approx


def test_round_trip_preserves_the_dense_vector(tmp_path):
    g = MeraGeometry(ell=2, d=2, m=4)
    st = random_state(g, np.random.default_rng(17))
    st2, _ = roundtrip(tmp_path, st)
    assert np.array_equal(expand_dense(st), expand_dense(st2))


def test_empty_meta_defaults(tmp_path):
    st = init_product(MeraGeometry(ell=2, d=2, m=4))
    st2, meta = roundtrip(tmp_path, st)
    assert meta == {}


def test_rejects_wrong_magic(tmp_path):
    p = tmp_path / "junk.chk"
    p.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CheckpointFormatError):
        checkpoint_load(p)


def test_rejects_future_version(tmp_path):
    st = init_product(MeraGeometry(ell=2, d=2, m=4))
    p = tmp_path / "v2.chk"
    checkpoint_save(st, p)
    raw = bytearray(p.read_bytes())
    raw[8:12] = struct.pack("<I", 2)
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        checkpoint_load(p)


def test_rejects_truncation_anywhere(tmp_path):
    st = init_product(MeraGeometry(ell=2, d=2, m=4))
    p = tmp_path / "full.chk"
    checkpoint_save(st, p)
    raw = p.read_bytes()
    q = tmp_path / "cut.chk"
    for cut in (4, 30, len(raw) // 2, len(raw) - 1):
        q.write_bytes(raw[:cut])
        with pytest.raises((CheckpointTruncatedError, CheckpointFormatError)):
            checkpoint_load(q)


def test_rejects_trailing_garbage(tmp_path):
    st = init_product(MeraGeometry(ell=2, d=2, m=4))
    p = tmp_path / "extra.chk"
    checkpoint_save(st, p)
    p.write_bytes(p.read_bytes() + b"\x00\x01")
    with pytest.raises(CheckpointFormatError):
        checkpoint_load(p)


def test_rejects_inconsistent_dims(tmp_path):
    """Tamper the stored m so tensor payload dims contradict the geometry."""
    st = init_product(MeraGeometry(ell=2, d=2, m=4))
    p = tmp_path / "tamper.chk"
    checkpoint_save(st, p)
    raw = bytearray(p.read_bytes())
    raw[20:24] = struct.pack("<I", 8)  # claim m = 8
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointGeometryError):
        checkpoint_load(p)


def test_rejects_impossible_geometry(tmp_path):
    st = init_product(MeraGeometry(ell=2, d=2, m=4))
    p = tmp_path / "geo.chk"
    checkpoint_save(st, p)
    raw = bytearray(p.read_bytes())
    raw[12:16] = struct.pack("<I", 0)  # ell = 0
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointGeometryError):
        checkpoint_load(p)
