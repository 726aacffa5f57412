"""Binary checkpoints for the layered state.

Format (all integers little-endian)
-----------------------------------
    offset  size      field
    0       8         magic  b"MERACHK1"
    8       4         format version (u32), currently 1
    12      4         ell (u32)
    16      4         d (u32)
    20      4         m (u32)
    24      4         flags (u32): bit 0 = translation-invariant storage
    28      4         weight-vector length (u32)
    32      8*n       weight vector, float64
    ...     4         tensor record count (u32)

then per tensor record:

    1                 kind (u8): 0 = chi, 1 = gamma
    4                 level (u32)
    4                 position (u32)
    1                 leg count (u8)
    4 * legs          leg dimensions (u32 each)
    16 * prod(dims)   entries, complex128, row-major (last leg fastest)

then a trailer: u32 byte length + UTF-8 JSON metadata (may be length 0).
Anything after the trailer is an error.  Tensor payloads are written from
the tensors' canonical row-major layout, so save -> load round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .state import CHI_LEGS, GAMMA_LEGS, MeraGeometry, MeraState
from .tensor import Tensor

MAGIC = b"MERACHK1"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint I/O failures."""


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint file (bad magic) or malformed record structure."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the advertised payload is complete."""


class CheckpointGeometryError(CheckpointError):
    """Stored dimensions contradict the stored geometry."""


def checkpoint_save(state: MeraState, path, meta: dict | None = None) -> None:
    """Serialize ``state`` (and optional JSON-able metadata) to ``path``."""
    g = state.geometry
    records = list(state.stored_tensors())
    parts = [
        MAGIC,
        struct.pack("<IIIII", VERSION, g.ell, g.d, g.m, 1 if state.ti else 0),
        struct.pack("<I", state.lam.shape[0]),
        state.lam.astype("<f8").tobytes(),
        struct.pack("<I", len(records)),
    ]
    for kind, level, pos, t in records:
        arr = np.ascontiguousarray(t.array, dtype=np.complex128)
        parts.append(struct.pack("<BIIB", 0 if kind == "chi" else 1, level, pos, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<c16").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    data = b"".join(parts)
    with open(path, "wb") as f:
        f.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointTruncatedError(
                f"needed {n} bytes at offset {self.off}, file has {len(self.data)}"
            )
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_load(path, with_meta: bool = False):
    """Load a checkpoint.  Returns the state, or ``(state, meta)`` when
    ``with_meta`` is set."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("bad magic: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"format version {version}, supported: {VERSION}")
    ell, d, m, flags = r.unpack("<IIII")
    try:
        geometry = MeraGeometry(ell=ell, d=d, m=m)
    except ValueError as e:
        raise CheckpointGeometryError(str(e)) from None
    ti = bool(flags & 1)
    (nlam,) = r.unpack("<I")
    if nlam != geometry.level_dim(0):
        raise CheckpointGeometryError(
            f"weight vector length {nlam} != {geometry.level_dim(0)} for this geometry"
        )
    lam = np.frombuffer(r.take(8 * nlam), dtype="<f8").copy()
    (nrec,) = r.unpack("<I")
    chis = {i: {} for i in range(1, ell + 1)}
    gammas = {i: {} for i in range(1, ell + 1)}
    for _ in range(nrec):
        kind_b, level, pos, nleg = r.unpack("<BIIB")
        dims = r.unpack(f"<{nleg}I")
        count = int(np.prod(dims, dtype=np.int64))
        payload = np.frombuffer(r.take(16 * count), dtype="<c16").copy().reshape(dims)
        if not 1 <= level <= ell:
            raise CheckpointGeometryError(f"tensor record at level {level} outside 1..{ell}")
        di = geometry.level_dim(level)
        dup = geometry.level_dim(level - 1)
        if kind_b == 0:
            if dims != (di, di, di, di):
                raise CheckpointGeometryError(
                    f"chi[{pos},{level}] dims {dims} != {(di, di, di, di)}"
                )
            chis[level][pos] = Tensor(payload, CHI_LEGS)
        elif kind_b == 1:
            if dims != (di, di, dup):
                raise CheckpointGeometryError(
                    f"gamma[{pos},{level}] dims {dims} != {(di, di, dup)}"
                )
            gammas[level][pos] = Tensor(payload, GAMMA_LEGS)
        else:
            raise CheckpointFormatError(f"unknown tensor kind byte {kind_b}")
    (nmeta,) = r.unpack("<I")
    meta = json.loads(r.take(nmeta).decode("utf-8")) if nmeta else {}
    if r.off != len(data):
        raise CheckpointFormatError(f"{len(data) - r.off} trailing bytes after trailer")

    expected = 1 if ti else None
    chis_l, gammas_l = {}, {}
    for i in range(1, ell + 1):
        n = expected if expected is not None else geometry.positions(i)
        for store, got in (("chi", chis[i]), ("gamma", gammas[i])):
            if sorted(got) != list(range(1, n + 1)):
                raise CheckpointGeometryError(
                    f"{store} row {i}: positions {sorted(got)} != 1..{n}"
                )
        chis_l[i] = [chis[i][p] for p in range(1, n + 1)]
        gammas_l[i] = [gammas[i][p] for p in range(1, n + 1)]
    state = MeraState(geometry, chis_l, gammas_l, lam, ti=ti)
    return (state, meta) if with_meta else state
