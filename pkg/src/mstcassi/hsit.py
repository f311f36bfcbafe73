"""HSIT binary containers for cubes, masks, measurements and weights.

Single array layout (all integers little-endian)::

    b"HSIT" | version u16 | dtype u8 (0=f32, 1=f64) | ndim u8 | dims u64 * ndim | payload

The payload is the row-major array in the declared dtype.

A weight bundle stores a manifest of named arrays::

    b"HSIB" | version u16 | count u32 | { name_len u16 | name utf-8 | HSIT record } * count
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"HSIT"
BUNDLE_MAGIC = b"HSIB"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class FormatError(ValueError):
    """Container bytes are not a valid HSIT stream."""


class IntegrityError(FormatError):
    """Container is truncated or its contents do not match what was expected."""


class VersionError(FormatError):
    """Container declares a version this reader does not understand."""


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise IntegrityError(f"truncated container while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    code = _CODES[arr.dtype]
    fh.write(MAGIC)
    fh.write(struct.pack("<HBB", VERSION, code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def read_array(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, code, ndim = struct.unpack("<HBB", _read_exact(fh, 4, "header"))
    if version != VERSION:
        raise VersionError(f"unsupported HSIT version {version} (reader handles {VERSION})")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "dims")) if ndim else ()
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = _read_exact(fh, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def save(path: str | os.PathLike, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    write_array(buf, arr)
    Path(path).write_bytes(buf.getvalue())


def load(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    arr = read_array(fh)
    if fh.read(1):
        raise IntegrityError(f"{path}: trailing bytes after HSIT payload")
    return arr


def save_bundle(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(BUNDLE_MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_array(buf, arr)
    # write whole file at once so readers never see a partial bundle
    Path(path).write_bytes(buf.getvalue())


def load_bundle(path: str | os.PathLike) -> dict[str, np.ndarray]:
    fh = io.BytesIO(Path(path).read_bytes())
    magic = _read_exact(fh, 4, "bundle magic")
    if magic != BUNDLE_MAGIC:
        raise FormatError(f"bad bundle magic {magic!r}, expected {BUNDLE_MAGIC!r}")
    version, count = struct.unpack("<HI", _read_exact(fh, 6, "bundle header"))
    if version != VERSION:
        raise VersionError(f"unsupported bundle version {version} (reader handles {VERSION})")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
        name = _read_exact(fh, n, "name").decode("utf-8")
        try:
            out[name] = read_array(fh)
        except IntegrityError as exc:
            raise IntegrityError(f"tensor {name!r}: {exc}") from None
    if fh.read(1):
        raise IntegrityError("trailing bytes after bundle")
    return out
