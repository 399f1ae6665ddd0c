"""Raw tensor file format.

Layout: magic ``EDMBTNSR``, u32 little-endian rank, rank u32 little-endian
dims, then float32 little-endian row-major payload.
"""

from __future__ import annotations

import struct

import numpy as np

TENSOR_MAGIC = b"EDMBTNSR"


class FormatError(ValueError):
    pass


def write_tensor(fh, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def read_tensor(fh):
    magic = fh.read(len(TENSOR_MAGIC))
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("truncated tensor header")
    (rank,) = struct.unpack("<I", raw)
    if rank > 8:
        raise FormatError(f"implausible tensor rank {rank}")
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise FormatError("truncated tensor dims")
    dims = struct.unpack(f"<{rank}I", raw)
    count = 1
    for d in dims:
        count *= d
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise FormatError(f"truncated tensor payload for shape {dims}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def save_tensor_file(path, array):
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor_file(path):
    with open(path, "rb") as fh:
        return read_tensor(fh)
