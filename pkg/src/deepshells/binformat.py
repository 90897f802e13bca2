"""
Little-endian binary containers shared by the cache and checkpoint formats.

Every file starts with a four byte magic number followed by a fixed header
described by a `struct` format string; the payload is a flat numpy array.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Tuple

import numpy as np

from deepshells.errors import CacheFormatError


def write_header(out: BinaryIO, magic: bytes, fmt: str, *values) -> None:
    assert len(magic) == 4
    out.write(magic)
    out.write(struct.pack("<" + fmt, *values))


def read_header(source: BinaryIO, magic: bytes, fmt: str, path=None) -> Tuple:
    found = source.read(4)
    if found != magic:
        raise CacheFormatError(
            f"{path or 'stream'}: expected magic {magic!r}, found {found!r}"
        )
    size = struct.calcsize("<" + fmt)
    raw = source.read(size)
    if len(raw) != size:
        raise CacheFormatError(f"{path or 'stream'}: truncated header")
    return struct.unpack("<" + fmt, raw)


def write_array(out: BinaryIO, values: np.ndarray, dtype: str, order="C") -> None:
    out.write(np.asarray(values).astype(dtype, copy=False).tobytes(order=order))


def read_array(source: BinaryIO, dtype: str, count: int, path=None) -> np.ndarray:
    item = np.dtype(dtype).itemsize
    raw = source.read(item * count)
    if len(raw) != item * count:
        raise CacheFormatError(
            f"{path or 'stream'}: expected {count} values of {dtype}, "
            f"file holds {len(raw) // item}"
        )
    return np.frombuffer(raw, dtype=dtype).copy()


def check_version(found: int, expected: int, path: Path) -> None:
    if found != expected:
        raise CacheFormatError(
            f"{path}: unsupported format version {found} (expected {expected})"
        )
