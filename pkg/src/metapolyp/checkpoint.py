"""Self-describing binary checkpoint files.

Layout (all integers little-endian):

    magic   4 bytes  = b"MPLY"
    version u32      = 1
    count   u32
    count entries of:
        name_len u32, name bytes (utf-8),
        rank u32, rank extents (u32 each),
        raw float32 data, little-endian, product(extents) values

Every value is stored as raw float32 bytes, so round trips are bit-exact.
64-bit counters (step counts, RNG state) are stored by reinterpreting the
uint64 bit pattern as two float32 slots, which survives the format losslessly.
"""

from __future__ import annotations

import struct
from typing import Dict

import numpy as np

from .errors import BadMagicError, CheckpointError, TruncatedError, VersionError

MAGIC = b"MPLY"
VERSION = 1


def u64_to_f32pair(value: int) -> np.ndarray:
    """Bit-reinterpret a uint64 as two float32 values (lossless)."""
    return np.array([value], dtype="<u8").view("<f4").copy()


def f32pair_to_u64(arr: np.ndarray) -> int:
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
    if a.size != 2:
        raise CheckpointError(f"expected a 2-slot counter entry, got {a.size} values")
    return int(a.view("<u8")[0])


def f64_to_f32pair(value: float) -> np.ndarray:
    """Bit-reinterpret a float64 as two float32 values (lossless)."""
    return np.array([value], dtype="<f8").view("<f4").copy()


def f32pair_to_f64(arr: np.ndarray) -> float:
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
    if a.size != 2:
        raise CheckpointError(f"expected a 2-slot scalar entry, got {a.size} values")
    return float(a.view("<f8")[0])


def save_arrays(path: str, arrays: Dict[str, np.ndarray]) -> None:
    """Write named float32 arrays in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype="<f4")
            if a.ndim and not a.flags.c_contiguous:
                a = np.ascontiguousarray(a)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"checkpoint truncated while reading {what}: need {n} bytes at "
                f"offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_arrays(path: str) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint file: magic {magic!r} != {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    count = r.u32("entry count")
    arrays: Dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u32(f"entry {i} name length")
        name = r.take(name_len, f"entry {i} name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        extents = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} extents"))
        n = int(np.prod(extents)) if rank else 1
        raw = r.take(4 * n, f"{name} data")
        arr = np.frombuffer(raw, dtype="<f4").reshape(extents).copy()
        if name in arrays:
            raise CheckpointError(f"duplicate entry name {name!r}")
        arrays[name] = arr
    if r.pos != len(data):
        raise CheckpointError(
            f"{len(data) - r.pos} trailing bytes after the last entry")
    return arrays
