"""Binary tensor container (``.svt``) used everywhere tensors touch disk.

Layout (little-endian)::

    b"SVTC" | version:u8 | dtype:u8 | rank:u8 | dims:u64 * rank | row-major payload
"""

import hashlib
import logging
import os
import struct
from pathlib import Path
from typing import Union

import numpy as np
import torch

from svimo.errors import IntegrityError, MissingArtifactError

logger = logging.getLogger(__name__)

MAGIC = b"SVTC"
VERSION = 1

DTYPE_CODES = {
    np.dtype("float32"): 1,
    np.dtype("float64"): 2,
    np.dtype("int64"): 3,
    np.dtype("uint8"): 4,
    np.dtype("int32"): 5,
    np.dtype("bool"): 6,
}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}

ArrayLike = Union[np.ndarray, torch.Tensor]


def _as_numpy(array: ArrayLike) -> np.ndarray:
    if isinstance(array, torch.Tensor):
        array = array.detach().cpu().numpy()
    return np.ascontiguousarray(array)


def encode_tensor(array: ArrayLike) -> bytes:
    arr = _as_numpy(array)
    if arr.dtype not in DTYPE_CODES:
        raise TypeError(f"Unsupported dtype for tensor container: {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError("rank > 255 not representable")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")


def decode_tensor(blob: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise IntegrityError(f"{name}: not a tensor container (bad magic)")
    version, code, rank = struct.unpack_from("<BBB", blob, 4)
    if version != VERSION:
        raise IntegrityError(f"{name}: unsupported container version {version}")
    if code not in CODE_DTYPES:
        raise IntegrityError(f"{name}: unknown dtype code {code}")
    offset = 7 + 8 * rank
    if len(blob) < offset:
        raise IntegrityError(f"{name}: truncated header")
    shape = struct.unpack_from(f"<{rank}Q", blob, 7)
    dtype = CODE_DTYPES[code].newbyteorder("<")
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise IntegrityError(
            f"{name}: payload has {len(blob) - offset} bytes, expected {expected} (truncated?)"
        )
    arr = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape)
    return arr.astype(CODE_DTYPES[code], copy=True)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write-then-rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def save_tensor(path: Path, array: ArrayLike) -> str:
    """Persist ``array``; returns the sha256 of the written bytes."""
    data = encode_tensor(array)
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def load_tensor(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Tensor file not found: {path}")
    return decode_tensor(path.read_bytes(), name=str(path))


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
