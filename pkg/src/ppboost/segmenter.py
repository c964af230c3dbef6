"""Box prompt to dense mask.

Two backends behind one config: a mock oracle for desk-scale verification
(probability 0.95 on GT-inside-prompt pixels, 0.02 elsewhere, optional seeded
boundary-band noise) and a file-exchange protocol for any external
visual-prompted model. Final masks binarize strictly above tau_seg.

Exchange protocol (all paths inside one exchange directory):
  toolkit writes  requests.jsonl   one object per line:
                  {sample_id, image_ref, x, y, w, h, image_h, image_w}
  runner writes   <sample_id>_prob.npy   H x W float32 probabilities in [0, 1]
                  <sample_id>.done       per-sample completion marker
                  done.marker            batch completion marker (no more output)
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import npyio
from .manifest import dumps_jsonl_line, write_jsonl
from .types import BBox, ConfigError, GridMap, Mask, ParseError, SampleRecord, ValidationError


@dataclass(frozen=True)
class SegmenterConfig:
    backend: str = "mock"
    tau_seg: float = 0.5
    mock_boundary_noise: float = 0.0
    timeout_s: float = 600.0
    poll_interval_s: float = 0.05

    def __post_init__(self):
        if self.backend not in ("mock", "external"):
            raise ConfigError(f"segmenter backend must be mock|external, got {self.backend!r}")
        if not 0.0 < self.tau_seg < 1.0:
            raise ConfigError("tau_seg must be strictly inside (0, 1)")
        if self.mock_boundary_noise < 0:
            raise ConfigError("mock_boundary_noise must be >= 0")


def binarize_probability(prob: np.ndarray, tau_seg: float) -> Mask:
    """Strict threshold: mask = 1 where probability > tau_seg."""
    return Mask((np.asarray(prob) > tau_seg).astype(np.uint8))


def _box_pixel_region(box: BBox, image_h: int, image_w: int) -> np.ndarray:
    """Pixels whose centers fall inside the box, clamped to the image."""
    x0 = max(box.x, 0.0)
    y0 = max(box.y, 0.0)
    x1 = min(box.x2, float(image_w))
    y1 = min(box.y2, float(image_h))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise ValidationError(f"prompt box {box} is degenerate after clamping")
    region = np.zeros((image_h, image_w), dtype=bool)
    cols = (np.arange(image_w) + 0.5 >= x0) & (np.arange(image_w) + 0.5 < x1)
    rows = (np.arange(image_h) + 0.5 >= y0) & (np.arange(image_h) + 0.5 < y1)
    region[np.ix_(rows, cols)] = True
    return region


def mock_segment(
    gt_mask: Mask,
    prompt: BBox,
    cfg: SegmenterConfig,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Oracle probability map: high inside GT-and-prompt, low elsewhere.

    Models the empirical behavior of box-prompted segmenters: content outside
    the prompt is missed entirely, margin inside the prompt is tolerated.
    With mock_boundary_noise > 0, pixels within that distance of the
    GT-and-prompt region boundary flip between high/low with p=0.5.
    """
    h, w = gt_mask.height, gt_mask.width
    region = _box_pixel_region(prompt, h, w) & (gt_mask.bits > 0)
    prob = np.where(region, 0.95, 0.02)
    if cfg.mock_boundary_noise > 0 and region.any():
        boundary = _region_boundary(region)
        dist = distance_transform_edt(~boundary)
        band = dist <= cfg.mock_boundary_noise
        if rng is None:
            rng = np.random.default_rng(0)
        flips = band & (rng.random((h, w)) < 0.5)
        prob = np.where(flips, np.where(region, 0.02, 0.95), prob)
    return prob


def _region_boundary(region: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or the image edge."""
    padded = np.pad(region, 1, constant_values=False)
    inner = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return region & ~inner


def write_requests(
    batch: list[tuple[SampleRecord, BBox]], exchange_dir
) -> Path:
    exchange = npyio.ensure_dir(exchange_dir)
    rows = []
    for rec, box in batch:
        rows.append(
            {
                "sample_id": rec.sample_id,
                "image_ref": rec.extras.get("image_path", rec.logits_path),
                "x": box.x,
                "y": box.y,
                "w": box.w,
                "h": box.h,
                "image_h": rec.image_h,
                "image_w": rec.image_w,
            }
        )
    path = exchange / "requests.jsonl"
    write_jsonl(path, rows)
    return path


def external_segment(
    batch: list[tuple[SampleRecord, BBox]],
    exchange_dir,
    cfg: SegmenterConfig,
) -> tuple[dict[str, Mask], list[dict]]:
    """Run one batch through the exchange protocol.

    Returns (masks by sample_id, per-sample error records). Timeouts, missing
    outputs, and out-of-range probabilities become error records; the batch
    continues past them.
    """
    exchange = Path(exchange_dir)
    write_requests(batch, exchange)
    deadline = time.monotonic() + cfg.timeout_s
    pending = {rec.sample_id: rec for rec, _ in batch}
    masks: dict[str, Mask] = {}
    errors: list[dict] = []
    while pending:
        done_batch = (exchange / "done.marker").exists()
        ready = [sid for sid in pending if (exchange / f"{sid}.done").exists()]
        for sid in ready:
            rec = pending.pop(sid)
            try:
                masks[sid] = _read_probability(exchange / f"{sid}_prob.npy", rec, cfg)
            except (ParseError, ValidationError) as exc:
                errors.append({"sample_id": sid, "error": str(exc)})
        if not pending:
            break
        if done_batch and not ready:
            for sid in sorted(pending):
                errors.append({"sample_id": sid, "error": "runner finished without output"})
            pending.clear()
            break
        if time.monotonic() > deadline:
            for sid in sorted(pending):
                errors.append({"sample_id": sid, "error": f"timeout after {cfg.timeout_s}s"})
            pending.clear()
            break
        time.sleep(cfg.poll_interval_s)
    return masks, errors


def _read_probability(path, rec: SampleRecord, cfg: SegmenterConfig) -> Mask:
    grid = npyio.read_grid(path)
    prob = grid.plane()
    if prob.shape != (rec.image_h, rec.image_w):
        raise ValidationError(
            f"{path}: probability map shape {prob.shape} != image {rec.image_h}x{rec.image_w}"
        )
    if float(prob.min()) < 0.0 or float(prob.max()) > 1.0:
        raise ValidationError(f"{path}: probabilities outside [0, 1]")
    return binarize_probability(prob, cfg.tau_seg)
