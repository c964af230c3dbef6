"""Volume slicer: 3-D medical volumes (.npy or .h5) to per-slice 2-D NPY
images (+ optional mask slices) and a slices index JSON."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .formats import ensure_dir, read_npy, write_npy_f32


def _load_volume(path: Path, dataset: str | None) -> np.ndarray:
    if path.suffix.lower() in (".h5", ".hdf5"):
        import h5py

        with h5py.File(path, "r") as f:
            key = dataset or next(iter(f.keys()))
            vol = np.asarray(f[key])
    else:
        vol = read_npy(path)
    if vol.ndim != 3:
        raise ValueError(f"{path}: expected a 3-D volume, got shape {vol.shape}")
    return vol


def slice_volume(
    volume_path,
    out_dir,
    mask_path=None,
    axis: int = 0,
    dataset: str | None = None,
    mask_dataset: str | None = None,
    normalize: bool = True,
    skip_empty_masks: bool = False,
) -> Path:
    """Write one 2-D NPY per slice along `axis`; returns the index JSON path.

    Images are min-max normalized to [0, 1] per volume (disable for already
    scaled data). Masks are stored as float32 0/1 slices next to the images.
    """
    volume_path = Path(volume_path)
    vol = _load_volume(volume_path, dataset).astype(np.float64)
    if not 0 <= axis <= 2:
        raise ValueError("axis must be 0, 1, or 2")
    vol = np.moveaxis(vol, axis, 0)
    mask = None
    if mask_path is not None:
        mask = _load_volume(Path(mask_path), mask_dataset)
        mask = np.moveaxis(mask, axis, 0)
        if mask.shape != vol.shape:
            raise ValueError(f"mask shape {mask.shape} != volume shape {vol.shape}")
    if normalize:
        lo, hi = float(vol.min()), float(vol.max())
        vol = (vol - lo) / (hi - lo) if hi > lo else np.zeros_like(vol)

    out = ensure_dir(out_dir)
    stem = volume_path.stem
    entries = []
    for z in range(vol.shape[0]):
        if skip_empty_masks and mask is not None and not mask[z].any():
            continue
        sid = f"{stem}_z{z:04d}"
        image_rel = f"{sid}.npy"
        write_npy_f32(out / image_rel, vol[z])
        entry = {"slice_id": sid, "image": image_rel, "index": z}
        if mask is not None:
            mask_rel = f"{sid}_mask.npy"
            write_npy_f32(out / mask_rel, (mask[z] != 0).astype(np.float32))
            entry["mask"] = mask_rel
        entries.append(entry)

    index_path = out / "slices.json"
    tmp = os.fspath(index_path) + ".tmp"
    with open(tmp, "w") as fp:
        fp.write(json.dumps({"volume": str(volume_path), "slices": entries}, indent=2) + "\n")
    os.replace(tmp, index_path)
    return index_path
