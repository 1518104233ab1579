"""PFT1: minimal binary container for one float64 tensor.

Layout (little-endian)::

    b"PFT1" | dtype u8 (1 = float64) | ndim u8 (1..4) | ndim x u32 dims | row-major payload

A 1-D tensor of two values is therefore 4 + 1 + 1 + 4 + 16 = 26 bytes.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"PFT1"
DTYPE_F64 = 1
MAX_NDIM = 4
_U32_MAX = 0xFFFFFFFF


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.float64:
        if not np.issubdtype(arr.dtype, np.floating) and not np.issubdtype(arr.dtype, np.integer):
            raise FormatError(f"unsupported dtype {arr.dtype}")
        arr = arr.astype(np.float64)
    if not 1 <= arr.ndim <= MAX_NDIM:
        raise FormatError(f"PFT1 stores 1..{MAX_NDIM} dimensions, got {arr.ndim}")
    if any(d > _U32_MAX for d in arr.shape):
        raise FormatError(f"dimension overflows u32: {arr.shape}")
    header = MAGIC + struct.pack("<BB", DTYPE_F64, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic, not a PFT1 file")
    dtype, ndim = struct.unpack_from("<BB", buf, 4)
    if dtype != DTYPE_F64:
        raise FormatError(f"{source}: unsupported dtype code {dtype}")
    if not 1 <= ndim <= MAX_NDIM:
        raise FormatError(f"{source}: ndim {ndim} outside 1..{MAX_NDIM}")
    head = 6 + 4 * ndim
    if len(buf) < head:
        raise FormatError(f"{source}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 6)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != head + 8 * count:
        raise FormatError(f"{source}: payload is {len(buf) - head} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=head).astype(np.float64).reshape(dims)


def write_tensor(path, arr) -> None:
    data = encode_tensor(arr)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read(), str(path))


def read_header(path) -> tuple[int, tuple]:
    """Return ``(dtype code, dims)`` after validating the payload size."""
    arr_bytes = open(path, "rb").read()
    decode_tensor(arr_bytes, str(path))
    dtype, ndim = struct.unpack_from("<BB", arr_bytes, 4)
    return dtype, struct.unpack_from(f"<{ndim}I", arr_bytes, 6)
