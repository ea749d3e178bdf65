"""Reader and writer for SGTF tensor files.

Layout (little-endian)::

    b"SGTF" | u8 version=1 | u8 dtype | u32 ndim | ndim x u64 dims | payload

dtype 1 is float32. dtype 2 (int64) is used for label vectors. A file may
hold several records back to back; checkpoints use that for their
parameter lists.
"""
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SGTF"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<i8")}
_CODES = {np.dtype("<f4"): 1, np.dtype("<i8"): 2}


def _encode(array):
    arr = np.asarray(array)
    if np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype("<i8")
    else:
        arr = arr.astype("<f4")
        if not np.all(np.isfinite(arr)):
            raise DataError("refusing to write non-finite values")
    code = _CODES[arr.dtype]
    header = MAGIC + struct.pack("<BBI", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def _decode(buf, offset):
    if buf[offset:offset + 4] != MAGIC:
        raise DataError("bad SGTF magic")
    version, code, ndim = struct.unpack_from("<BBI", buf, offset + 4)
    if version != VERSION:
        raise DataError(f"unsupported SGTF version {version}")
    if code not in DTYPES:
        raise DataError(f"unknown SGTF dtype code {code}")
    offset += 10
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    dtype = DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    nbytes = count * dtype.itemsize
    if offset + nbytes > len(buf):
        raise DataError("truncated SGTF payload")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True), offset + nbytes


def write_tensor(path, array):
    Path(path).write_bytes(_encode(array))


def write_tensors(path, arrays):
    Path(path).write_bytes(b"".join(_encode(a) for a in arrays))


def read_tensors(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing tensor file: {path}")
    buf = path.read_bytes()
    out, offset = [], 0
    while offset < len(buf):
        arr, offset = _decode(buf, offset)
        out.append(arr)
    if not out:
        raise DataError(f"empty tensor file: {path}")
    return out


def read_tensor(path):
    arrays = read_tensors(path)
    if len(arrays) != 1:
        raise DataError(f"{path}: expected one record, found {len(arrays)}")
    arr = arrays[0]
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite values")
    return arr
