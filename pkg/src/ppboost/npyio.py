"""Tensor file IO.

On-disk contract: grids are NPY v1.0, dtype float32, C-order, 2-D or 3-D.
Masks are NPY uint8 with values in {0, 1}; 8-bit grayscale PNG (nonzero =
foreground) is accepted on read only. The writer is the single canonical
serializer, so write -> read -> write is byte-identical.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import numpy.lib.format as npformat

from .types import GridMap, Mask, ParseError, PromptEmbedding

_F32 = np.dtype("<f4")
_U8 = np.dtype("|u1")


def _read_npy(path, allowed_dtypes, min_ndim, max_ndim) -> np.ndarray:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fp:
            try:
                version = npformat.read_magic(fp)
            except ValueError as exc:
                raise ParseError(f"{path}: not an NPY file ({exc})") from exc
            if version != (1, 0):
                raise ParseError(f"{path}: unsupported NPY version {version}, need 1.0")
            shape, fortran_order, dtype = npformat.read_array_header_1_0(fp)
            if dtype not in allowed_dtypes:
                raise ParseError(f"{path}: unsupported dtype {dtype.str!r}")
            if fortran_order:
                raise ParseError(f"{path}: Fortran-order arrays are not supported")
            if not (min_ndim <= len(shape) <= max_ndim):
                raise ParseError(f"{path}: expected {min_ndim}-D..{max_ndim}-D, got shape {shape}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.fromfile(fp, dtype=dtype, count=count)
            if data.size != count:
                raise ParseError(f"{path}: truncated data, expected {count} items, got {data.size}")
            return data.reshape(shape)
    except FileNotFoundError as exc:
        raise ParseError(f"{path}: no such file") from exc


def _write_npy(path, array: np.ndarray) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fp:
        npformat.write_array(fp, np.ascontiguousarray(array), version=(1, 0))
    os.replace(tmp, path)


def read_grid(path) -> GridMap:
    """Read a float32 grid; rejects wrong dtype/order and non-finite values."""
    arr = _read_npy(path, (_F32,), 2, 3)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{os.fspath(path)}: grid contains NaN/Inf values")
    return GridMap(arr)


def write_grid(path, grid: GridMap) -> None:
    arr = np.asarray(grid.values)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{os.fspath(path)}: refusing to write non-finite grid")
    _write_npy(path, arr.astype(_F32, copy=False))


def read_mask(path) -> Mask:
    """Read an NPY u8 mask, or an 8-bit grayscale PNG (nonzero = foreground)."""
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        from PIL import Image

        try:
            with Image.open(path) as img:
                arr = np.asarray(img.convert("L"))
        except (OSError, ValueError) as exc:
            raise ParseError(f"{path}: failed to read PNG ({exc})") from exc
        return Mask((arr != 0).astype(np.uint8))
    arr = _read_npy(path, (_U8,), 2, 2)
    if arr.size and int(arr.max(initial=0)) > 1:
        raise ParseError(f"{path}: mask values must be 0/1")
    return Mask(arr)


def write_mask(path, mask: Mask) -> None:
    _write_npy(path, mask.bits.astype(_U8, copy=False))


def read_embedding(path, prompt_id: str) -> PromptEmbedding:
    """Read a 1-D float32 prompt-embedding vector."""
    arr = _read_npy(path, (_F32,), 1, 1)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{os.fspath(path)}: embedding contains NaN/Inf values")
    return PromptEmbedding(prompt_id, arr.astype(np.float64))


def write_embedding(path, vector: np.ndarray) -> None:
    _write_npy(path, np.asarray(vector, dtype=_F32).reshape(-1))


def sha256_file(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
