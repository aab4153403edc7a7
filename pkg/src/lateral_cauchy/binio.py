"""Dense binary arrays: uint64 ndim, ndim x uint64 dims, then float64 data.

All integers and floats are little-endian; data is in C order.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import ShapeError

_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")


def write_array(path, arr) -> None:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
    with open(path, "wb") as fh:
        fh.write(np.array([arr.ndim], dtype=_U64).tobytes())
        fh.write(np.array(arr.shape, dtype=_U64).tobytes())
        fh.write(arr.astype(_F64, copy=False).tobytes(order="C"))


def read_array(path) -> np.ndarray:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise ShapeError(f"{path}: truncated header")
        ndim = int(np.frombuffer(head, dtype=_U64)[0])
        if ndim > 16:
            raise ShapeError(f"{path}: implausible ndim {ndim}")
        dims = np.frombuffer(fh.read(8 * ndim), dtype=_U64).astype(int)
        if dims.size != ndim:
            raise ShapeError(f"{path}: truncated header")
        count = int(np.prod(dims)) if ndim else 1
        expected = 8 * (1 + ndim + count)
        if size != expected:
            raise ShapeError(f"{path}: expected {expected} bytes for shape {tuple(dims)}, found {size}")
        data = np.frombuffer(fh.read(8 * count), dtype=_F64)
    return data.reshape(tuple(dims)).astype(float)
