"""Binary tensor container used for weights and index persistence.

Layout (little-endian throughout):

    magic "CSTF" | u32 format version | u32 header length | header JSON (utf-8)
    then per tensor, in sorted-name order:
    u16 name length | name utf-8 | u8 dtype code | u8 rank | u32 dims...
    | raw data | u64 checksum

Float tensors are stored as 32-bit floats; the checksum is the first 8 bytes
of a BLAKE2b digest over the raw data bytes, so truncation and bit rot are
caught per tensor.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"CSTF"
FORMAT_VERSION = 1

_DTYPE_CODES: dict[str, int] = {"<f4": 1, "<i4": 2, "|u1": 3}
_CODE_DTYPES = {v: np.dtype(k) for k, v in _DTYPE_CODES.items()}


class VersionMismatchError(ValueError):
    """Magic bytes, format version, or stored config do not match expectations."""


class ChecksumError(ValueError):
    """File truncated or tensor payload does not match its checksum."""


def _checksum(data: bytes) -> int:
    digest = hashlib.blake2b(data, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _canonical(array: np.ndarray) -> np.ndarray:
    if array.dtype == np.float32:
        dtype = "<f4"
    elif array.dtype == np.int32:
        dtype = "<i4"
    elif array.dtype == np.uint8:
        dtype = "|u1"
    else:
        raise TypeError(f"unsupported tensor dtype: {array.dtype}")
    return np.ascontiguousarray(array, dtype=dtype)


def write_container(path: str | Path, header: dict[str, Any], tensors: dict[str, np.ndarray]) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name in sorted(tensors):
            array = _canonical(tensors[name])
            name_bytes = name.encode("utf-8")
            data = array.tobytes()
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<BB", _DTYPE_CODES[array.dtype.str], array.ndim))
            fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fh.write(data)
            fh.write(struct.pack("<Q", _checksum(data)))


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ChecksumError("file truncated")
    return data


def read_container(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise VersionMismatchError(f"{path}: not a tensor container")
        version, header_len = struct.unpack("<II", _read_exact(fh, 8))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"{path}: format version {version} unsupported")
        header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        while True:
            prefix = fh.read(2)
            if not prefix:
                break
            if len(prefix) != 2:
                raise ChecksumError("file truncated")
            (name_len,) = struct.unpack("<H", prefix)
            name = _read_exact(fh, name_len).decode("utf-8")
            code, rank = struct.unpack("<BB", _read_exact(fh, 2))
            if code not in _CODE_DTYPES:
                raise ChecksumError(f"unknown dtype code {code}")
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            dtype = _CODE_DTYPES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            data = _read_exact(fh, n_bytes)
            (stored_sum,) = struct.unpack("<Q", _read_exact(fh, 8))
            if _checksum(data) != stored_sum:
                raise ChecksumError(f"tensor {name!r}: checksum mismatch")
            tensors[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return header, tensors
