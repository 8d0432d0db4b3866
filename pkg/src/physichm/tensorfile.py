"""PHMT binary tensor files.

Layout (little-endian)::

    magic   4 bytes  b"PHMT"
    version u32      1
    dtype   u8       0 = float32, 1 = float64
    ndim    u32
    dims    ndim x u32
    payload row-major values
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"PHMT"
VERSION = 1
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFileError(ValueError):
    pass


def encode_tensor(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.dtype not in _CODES:
        raise TensorFileError(f"unsupported dtype {t.dtype}")
    if not np.all(np.isfinite(t)):
        raise TensorFileError("refusing to write non-finite values")
    code = _CODES[t.dtype]
    header = MAGIC + struct.pack("<IBI", VERSION, code, t.ndim)
    header += struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t, dtype=_DTYPES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 13:
        raise TensorFileError("truncated header")
    if buf[:4] != MAGIC:
        raise TensorFileError("bad magic")
    version, code, ndim = struct.unpack_from("<IBI", buf, 4)
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise TensorFileError(f"unknown dtype code {code}")
    off = 13 + 4 * ndim
    if len(buf) < off:
        raise TensorFileError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 13)
    dtype = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != n * dtype.itemsize:
        raise TensorFileError(
            f"truncated payload: expected {n * dtype.itemsize} bytes, found {len(buf) - off}")
    return np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path: str | os.PathLike, t: np.ndarray) -> None:
    data = encode_tensor(t)
    with open(path, "wb") as fh:
        fh.write(data)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
