"""Feature/embedding exporter: images + a text prompt pool in, toolkit
manifest + per-image feature grids + per-prompt embedding vectors out."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .formats import ensure_dir, write_manifest, write_npy_f32
from .stub_models import StubEncoder

IMAGE_SUFFIXES = (".png", ".npy")


def _load_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".png":
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    from .formats import read_npy

    arr = read_npy(path)
    if arr.ndim != 2:
        raise ValueError(f"{path}: image arrays must be 2-D")
    return arr.astype(np.float64)


def export_confidence_inputs(
    model_id: str,
    image_dir,
    prompts: list[str],
    out_dir,
    rows: int = 16,
    cols: int = 16,
    dim: int = 8,
    seed: int = 0,
    infer_fraction: float = 0.25,
) -> Path:
    """Encode every image and prompt; write the toolkit dataset tree.

    Prompt assignment is a seeded draw from the pool, recorded per sample in
    the manifest. Returns the manifest path.
    """
    image_dir = Path(image_dir)
    paths = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ValueError(f"{image_dir}: no .png/.npy images found")
    if not prompts:
        raise ValueError("prompt pool is empty")

    out = ensure_dir(out_dir)
    ensure_dir(out / "features")
    ensure_dir(out / "prompts")
    encoder = StubEncoder(model_id, rows=rows, cols=cols, dim=dim)

    prompt_ids = [f"prompt_{i:02d}" for i in range(len(prompts))]
    for pid, text in zip(prompt_ids, prompts):
        write_npy_f32(out / "prompts" / f"{pid}.npy", encoder.encode_text(text))

    rng = np.random.default_rng(seed)
    n_infer = int(np.ceil(infer_fraction * len(paths)))
    entries = []
    for i, path in enumerate(paths):
        img = _load_image(path)
        feats = encoder.encode_image(img)
        if feats.shape != (rows, cols, dim):
            raise ValueError(
                f"{path}: encoder produced {feats.shape}, declared ({rows}, {cols}, {dim})"
            )
        sid = path.stem
        rel = f"features/{sid}.npy"
        write_npy_f32(out / rel, feats)
        entries.append(
            {
                "sample_id": sid,
                "image_h": int(img.shape[0]),
                "image_w": int(img.shape[1]),
                "grid": {"rows": rows, "cols": cols, "channels": dim},
                "logits_path": rel,
                "prompt_id": prompt_ids[int(rng.integers(0, len(prompt_ids)))],
                "split": "train" if i < len(paths) - n_infer else "infer",
                "image_path": str(path),
            }
        )
    manifest = out / "manifest.json"
    write_manifest(manifest, entries)
    return manifest
