"""Binary tensor files.

Layout: ``b"CDSPT01"``, one dtype byte (0=f32, 1=f64), one rank byte, ``rank``
little-endian u32 extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from cdsp.engine.tensor import Tensor

MAGIC = b"CDSPT01"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFormatError(ValueError):
    pass


def tensor_to_bytes(x) -> bytes:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.dtype not in _CODES:
        raise TensorFormatError(f"cannot serialise dtype {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFormatError("rank exceeds 255")
    code = _CODES[arr.dtype]
    head = MAGIC + bytes([code, arr.ndim]) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 9 or buf[:7] != MAGIC:
        raise TensorFormatError("bad magic; not a CDSPT01 tensor file")
    code, rank = buf[7], buf[8]
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    end = 9 + 4 * rank
    if len(buf) < end:
        raise TensorFormatError("truncated header")
    shape = struct.unpack(f"<{rank}I", buf[9:end])
    dt = _DTYPES[code]
    count = int(np.prod(shape)) if rank else 1
    if len(buf) - end != count * dt.itemsize:
        raise TensorFormatError(f"payload has {len(buf) - end} bytes, expected {count * dt.itemsize}")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=end).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True)


def save_tensor(path, x) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(tensor_to_bytes(x))


def load_array(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        return tensor_from_bytes(fh.read())


def load_tensor(path, requires_grad: bool = False) -> Tensor:
    return Tensor(load_array(path), requires_grad=requires_grad)
