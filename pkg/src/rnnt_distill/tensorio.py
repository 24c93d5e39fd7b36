"""Bit-exact binary tensor files.

Layout: magic b"RNTD", a little-endian uint32 rank, rank little-endian uint32
dims, then the row-major payload as little-endian IEEE-754 float64. Write
followed by read reproduces the array bit for bit.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import TensorFormatError

MAGIC = b"RNTD"


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise TensorFormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims_end = 8 + 4 * rank
    if len(raw) < dims_end:
        raise TensorFormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = dims_end + 8 * count
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(raw) - dims_end} bytes, expected {8 * count}"
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=dims_end)
    return data.reshape(dims).astype(np.float64)
