"""Seeded synthetic benchmark generator.

Each sample gets a latent GT mask (one primary shape, optional distractor blob
excluded from GT but visible to the confidence path), a logit grid built as
signal * cell-occupancy + per-sample Gaussian noise, a GT box, and a manifest
entry recording the drawn noise sigma. Per-sample RNG streams are split from
the master seed by sample index, so parallel and serial generation agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import npyio
from .manifest import write_manifest
from .rng import rng_from
from .types import BBox, ConfigError, GridShape, Mask, SampleRecord, ValidationError

PROMPT_POOL_SIZE = 20


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 200
    image_h: int = 128
    image_w: int = 128
    grid: GridShape = field(default_factory=lambda: GridShape(32, 32, 1))
    shape_kind: str = "ellipse"
    size_range: tuple = (0.1, 0.4)
    signal: float = 3.0
    noise_sigma_range: tuple = (0.0, 0.0)
    noise_dimming: float = 0.0
    distractor_prob: float = 0.2
    distractor_gain: float = 0.6
    infer_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")
        if self.shape_kind not in ("ellipse", "rectangle", "blob"):
            raise ConfigError(f"unknown shape_kind {self.shape_kind!r}")
        lo, hi = self.size_range
        if not (0.05 <= lo <= hi <= 0.6):
            raise ConfigError("size_range must satisfy 0.05 <= lo <= hi <= 0.6")
        nlo, nhi = self.noise_sigma_range
        if not (0.0 <= nlo <= nhi):
            raise ConfigError("noise_sigma_range must satisfy 0 <= lo <= hi")
        if not 0.0 <= self.distractor_prob <= 1.0:
            raise ConfigError("distractor_prob must be in [0, 1]")
        if self.distractor_gain < 0:
            raise ConfigError("distractor_gain must be >= 0")
        if not 0.0 <= self.noise_dimming < 1.0:
            raise ConfigError("noise_dimming must be in [0, 1)")
        if not 0.0 <= self.infer_fraction < 1.0:
            raise ConfigError("infer_fraction must be in [0, 1)")
        if min(self.image_h, self.image_w) * lo < 2.0:
            raise ValidationError("size_range lower bound yields sub-2px objects")


def _pixel_centers(h: int, w: int):
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    return np.meshgrid(ys, xs, indexing="ij")


def _draw_shape(rng, cfg: SynthConfig, max_blob_gain: float = 0.24):
    """One shape's geometry: kind-specific mask drawn at a safe margin."""
    lo, hi = cfg.size_range
    wf = rng.uniform(lo, hi) * cfg.image_w
    hf = rng.uniform(lo, hi) * cfg.image_h
    margin = 1.0 + (max_blob_gain if cfg.shape_kind == "blob" else 0.0)
    half_w = 0.5 * wf * margin
    half_h = 0.5 * hf * margin
    if cfg.image_w - 2 * half_w < 1 or cfg.image_h - 2 * half_h < 1:
        raise ValidationError(
            f"size_range {cfg.size_range} cannot fit inside {cfg.image_h}x{cfg.image_w}"
        )
    cx = rng.uniform(half_w, cfg.image_w - half_w)
    cy = rng.uniform(half_h, cfg.image_h - half_h)
    params = {"cx": cx, "cy": cy, "a": 0.5 * wf, "b": 0.5 * hf}
    if cfg.shape_kind == "blob":
        params["amps"] = rng.uniform(0.0, 0.12, size=2)
        params["phases"] = rng.uniform(0.0, 2 * math.pi, size=2)
    return params


def _rasterize(params: dict, kind: str, h: int, w: int) -> np.ndarray:
    yy, xx = _pixel_centers(h, w)
    dx = (xx - params["cx"]) / params["a"]
    dy = (yy - params["cy"]) / params["b"]
    if kind == "rectangle":
        return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
    rho = np.sqrt(dx * dx + dy * dy)
    if kind == "ellipse":
        return rho <= 1.0
    theta = np.arctan2(dy, dx)
    radius = 1.0
    for m, (amp, phase) in enumerate(zip(params["amps"], params["phases"]), start=2):
        radius = radius + amp * np.cos(m * theta + phase)
    return rho <= radius


def cell_occupancy(mask: np.ndarray, grid: GridShape) -> np.ndarray:
    """Per-cell mean of the mask, binning pixel centers into cell footprints."""
    h, w = mask.shape
    row_cell = np.minimum(((np.arange(h) + 0.5) * grid.rows / h).astype(np.int64), grid.rows - 1)
    col_cell = np.minimum(((np.arange(w) + 0.5) * grid.cols / w).astype(np.int64), grid.cols - 1)
    flat = row_cell[:, None] * grid.cols + col_cell[None, :]
    sums = np.bincount(flat.ravel(), weights=mask.astype(np.float64).ravel(), minlength=grid.cells)
    counts = np.bincount(flat.ravel(), minlength=grid.cells)
    return (sums / counts).reshape(grid.rows, grid.cols)


def tight_bbox(mask: np.ndarray) -> BBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValidationError("cannot take the bbox of an empty mask")
    return BBox(
        float(cols[0]),
        float(rows[0]),
        float(cols[-1] - cols[0] + 1),
        float(rows[-1] - rows[0] + 1),
    )


def _make_sample(cfg: SynthConfig, index: int):
    """Deterministic sample from the split RNG stream; fixed draw order:
    primary shape, distractor decision/shape, prompt id, sigma, noise.

    A distractor blob lights up the logit map at distractor_gain * signal but
    stays out of the GT mask: weaker than the target, it only crosses
    extraction thresholds once noise pushes it over, creating the
    irrelevant/stretched-box failure mode on unstable samples."""
    rng = rng_from(cfg.seed, index)
    primary = _draw_shape(rng, cfg)
    gt = _rasterize(primary, cfg.shape_kind, cfg.image_h, cfg.image_w)
    if not gt.any():
        raise ValidationError(f"sample {index}: drawn shape rasterized empty")
    distractor = None

    has_distractor = rng.random() < cfg.distractor_prob
    if has_distractor:
        gt_box = tight_bbox(gt)
        for _ in range(20):
            d = _draw_shape(rng, cfg)
            d["a"] *= rng.uniform(0.3, 0.6)
            d["b"] *= rng.uniform(0.3, 0.6)
            dmask = _rasterize(d, "ellipse", cfg.image_h, cfg.image_w)
            if not dmask.any():
                continue
            dbox = tight_bbox(dmask)
            if _boxes_disjoint(gt_box, dbox):
                distractor = dmask
                break

    prompt_idx = int(rng.integers(0, PROMPT_POOL_SIZE))
    sigma = float(rng.uniform(cfg.noise_sigma_range[0], cfg.noise_sigma_range[1]))
    occ = cell_occupancy(gt, cfg.grid)
    # noise_dimming couples per-sample instability to target strength: the
    # noisiest samples also light up weakest, which is what turns their
    # extracted boxes undersized or irrelevant instead of merely jittered.
    # At sigma = 0 (and by default) the grid is exactly signal * occupancy.
    amp = cfg.signal
    hi = cfg.noise_sigma_range[1]
    if cfg.noise_dimming > 0.0 and hi > 0.0:
        amp = cfg.signal * (1.0 - cfg.noise_dimming * min(sigma, hi) / hi)
    logits = amp * occ + sigma * rng.standard_normal((cfg.grid.rows, cfg.grid.cols))
    if distractor is not None:
        logits = logits + cfg.signal * cfg.distractor_gain * cell_occupancy(distractor, cfg.grid)
    return gt, logits, prompt_idx, sigma


def _boxes_disjoint(a: BBox, b: BBox) -> bool:
    return a.x2 <= b.x or b.x2 <= a.x or a.y2 <= b.y or b.y2 <= a.y


def generate(cfg: SynthConfig, out_dir) -> Path:
    """Write the dataset tree (grids/, masks/, manifest.json); returns the
    manifest path. Identical configs and seeds produce identical bytes."""
    out = npyio.ensure_dir(out_dir)
    npyio.ensure_dir(out / "grids")
    npyio.ensure_dir(out / "masks")
    n_infer = math.ceil(cfg.infer_fraction * cfg.n_samples)
    n_train = cfg.n_samples - n_infer
    records = []
    for i in range(cfg.n_samples):
        gt, logits, prompt_idx, sigma = _make_sample(cfg, i)
        sid = f"synth_{i:04d}"
        logits_rel = f"grids/{sid}_logits.npy"
        mask_rel = f"masks/{sid}_gt.npy"
        npyio.write_grid(out / logits_rel, _as_grid(logits))
        npyio.write_mask(out / mask_rel, Mask(gt.astype(np.uint8)))
        box = tight_bbox(gt)
        records.append(
            SampleRecord(
                sample_id=sid,
                image_h=cfg.image_h,
                image_w=cfg.image_w,
                grid=cfg.grid,
                logits_path=logits_rel,
                prompt_id=f"prompt_{prompt_idx:02d}",
                split="train" if i < n_train else "infer",
                gt_mask_path=mask_rel,
                extras={"noise_sigma": sigma, "gt_bbox": box.to_dict()},
            )
        )
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, records)
    return manifest_path


def _as_grid(values: np.ndarray):
    from .types import GridMap

    return GridMap(values.astype(np.float32))
