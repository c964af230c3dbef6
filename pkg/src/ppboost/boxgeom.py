"""Bounding-box geometry: pseudo-box extraction, IoU, NMS, selective
expansion, and center-preserving perturbation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .types import BBox, ConfigError, Detection, EmptyForeground, GridMap, ValidationError


@dataclass(frozen=True)
class ExtractConfig:
    """Binarization threshold and upsampling mode for pseudo-box extraction."""

    binarize_threshold: float = 0.5
    upsample: str = "bilinear"

    def __post_init__(self):
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ConfigError("binarize_threshold must be strictly inside (0, 1)")
        if self.upsample not in ("bilinear", "nearest"):
            raise ConfigError(f"upsample must be bilinear|nearest, got {self.upsample!r}")


@dataclass(frozen=True)
class ExpansionConfig:
    """Expansion ratio and the confidence pivot (median of the inference set,
    or a fixed value)."""

    ratio: float = 0.15
    phi_mode: str = "median"
    phi: Optional[float] = None
    clamp_to_image: bool = True

    def __post_init__(self):
        if self.ratio < 0:
            raise ConfigError("expansion ratio must be >= 0")
        if self.phi_mode not in ("median", "fixed"):
            raise ConfigError(f"phi_mode must be median|fixed, got {self.phi_mode!r}")
        if self.phi_mode == "fixed" and self.phi is None:
            raise ConfigError("phi_mode=fixed needs an explicit phi")


def upsample_map(grid: GridMap, image_h: int, image_w: int, mode: str = "bilinear") -> GridMap:
    """Resize a 1-channel grid to image resolution.

    Bilinear uses half-pixel-center mapping src = (dst + 0.5) * scale - 0.5
    with edge clamping; nearest takes the floor of the same mapping.
    """
    if image_h < 1 or image_w < 1:
        raise ValidationError(f"target dims must be positive, got {image_h}x{image_w}")
    src = np.ascontiguousarray(grid.plane(), dtype=np.float64)
    if mode == "bilinear":
        return GridMap(kernels.upsample_bilinear(src, image_h, image_w))
    if mode == "nearest":
        return GridMap(kernels.upsample_nearest(src, image_h, image_w))
    raise ConfigError(f"unknown upsample mode {mode!r}")


def extract_pseudo_bbox(confidence: GridMap, cfg: ExtractConfig) -> BBox:
    """Tight box over all pixels strictly above the binarization threshold.

    Inclusive pixel extents: a single foreground pixel yields a 1x1 box.
    """
    fg = confidence.plane() > cfg.binarize_threshold
    if not fg.any():
        raise EmptyForeground(
            f"no pixel above threshold {cfg.binarize_threshold} (max={confidence.plane().max():.4g})"
        )
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return BBox(float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def nms(dets: list[Detection], iou_threshold: float = 0.7) -> list[Detection]:
    """Greedy NMS: keep a detection iff its IoU with every already-kept one is
    <= threshold. Priority: score desc, then larger area, then input order."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ConfigError("iou_threshold must be in (0, 1]")
    if not dets:
        return []
    boxes = np.array([[d.box.x, d.box.y, d.box.w, d.box.h] for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    areas = boxes[:, 2] * boxes[:, 3]
    # lexsort: last key is primary
    order = np.lexsort((np.arange(len(dets)), -areas, -scores))
    keep = kernels.nms_keep(np.ascontiguousarray(boxes[order]), float(iou_threshold))
    return [dets[i] for i in order[keep]]


def resolve_phi(scores: list[float], cfg: ExpansionConfig) -> float:
    """The expansion pivot: fixed value, or the lower median of the score set."""
    if cfg.phi_mode == "fixed":
        return float(cfg.phi)
    if not scores:
        raise ValidationError("median phi needs at least one score")
    ordered = sorted(scores)
    # lower median: 1-based order statistic ceil(n/2)
    return float(ordered[(len(ordered) + 1) // 2 - 1])


def selective_expand(
    dets: list[Detection],
    cfg: ExpansionConfig,
    image_h: int,
    image_w: int,
    phi: Optional[float] = None,
) -> list[BBox]:
    """Expand low-confidence boxes outward by the fixed ratio; leave boxes with
    score strictly above phi unchanged. Clamps to the image unless disabled."""
    if phi is None:
        phi = resolve_phi([d.score for d in dets], cfg)
    out = []
    r = cfg.ratio
    for det in dets:
        b = det.box
        if det.score > phi or r == 0.0:
            box = b
        else:
            box = BBox(b.x - 0.5 * r * b.w, b.y - 0.5 * r * b.h, (1.0 + r) * b.w, (1.0 + r) * b.h)
        if cfg.clamp_to_image:
            box = clamp_box(box, image_h, image_w)  # degenerate input boxes are the caller's bug
        out.append(box)
    return out


def clamp_box_or_none(box: BBox, image_h: int, image_w: int) -> Optional[BBox]:
    """Intersect a box with the image rectangle; None when they don't meet."""
    x0 = max(box.x, 0.0)
    y0 = max(box.y, 0.0)
    x1 = min(box.x2, float(image_w))
    y1 = min(box.y2, float(image_h))
    if x1 - x0 <= 0.0 or y1 - y0 <= 0.0:
        return None
    return BBox(x0, y0, x1 - x0, y1 - y0)


def clamp_box(box: BBox, image_h: int, image_w: int) -> BBox:
    """Intersect a box with the image rectangle; degenerate results are errors."""
    clamped = clamp_box_or_none(box, image_h, image_w)
    if clamped is None:
        raise ValidationError(
            f"box {box} is degenerate after clamping to {image_w}x{image_h}"
        )
    return clamped


def is_out_of_bounds(box: BBox, image_h: int, image_w: int) -> bool:
    return box.x < 0 or box.y < 0 or box.x2 > image_w or box.y2 > image_h


def perturb_box(b: BBox, signed_ratio: float) -> BBox:
    """Center-preserving scale of both side lengths by (1 + signed_ratio)."""
    if signed_ratio <= -1.0:
        raise ConfigError("signed_ratio must be > -1")
    return BBox(
        b.x - 0.5 * signed_ratio * b.w,
        b.y - 0.5 * signed_ratio * b.h,
        (1.0 + signed_ratio) * b.w,
        (1.0 + signed_ratio) * b.h,
    )
