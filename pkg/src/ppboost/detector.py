"""Single-class anchor-grid detector over patch grids.

A linear model on k x k feature windows predicts per-cell objectness and box
deltas against one anchor per cell. Windows are split into mirror-symmetric
and antisymmetric parts (objectness/ty/tw/th read the symmetric part, tx the
antisymmetric part) so a horizontal flip of the features flips the decoded
boxes exactly, for any weights. Losses are mean BCE on objectness plus
smooth-L1 on deltas over positive cells, with closed-form gradients.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .boxgeom import iou
from .types import BBox, ConfigError, Detection, GridMap, GridShape, ValidationError

DELTA_CLIP = 20.0  # |tw|,|th| cap at decode time; exp stays finite


@dataclass(frozen=True)
class DetectorParams:
    """Objectness weights and four delta regressors, each of length C*k*k + 1."""

    w_obj: np.ndarray
    w_box: np.ndarray  # (4, dim)
    k: int = 3
    channels: int = 1

    def __post_init__(self):
        if self.k % 2 != 1 or self.k < 1:
            raise ConfigError(f"window size k must be odd and >= 1, got {self.k}")
        dim = self.k * self.k * self.channels + 1
        w_obj = np.asarray(self.w_obj, dtype=np.float64)
        w_box = np.asarray(self.w_box, dtype=np.float64)
        if w_obj.shape != (dim,) or w_box.shape != (4, dim):
            raise ValidationError(
                f"weight shapes must be ({dim},) and (4, {dim}), got {w_obj.shape} {w_box.shape}"
            )
        if not (np.all(np.isfinite(w_obj)) and np.all(np.isfinite(w_box))):
            raise ValidationError("detector weights must be finite")
        object.__setattr__(self, "w_obj", w_obj)
        object.__setattr__(self, "w_box", w_box)

    @property
    def dim(self) -> int:
        return self.k * self.k * self.channels + 1

    @classmethod
    def zeros(cls, k: int = 3, channels: int = 1) -> "DetectorParams":
        dim = k * k * channels + 1
        return cls(np.zeros(dim), np.zeros((4, dim)), k=k, channels=channels)

    @classmethod
    def random_init(cls, k: int, channels: int, rng: np.random.Generator, scale: float = 0.01):
        dim = k * k * channels + 1
        return cls(
            rng.normal(0.0, scale, dim),
            rng.normal(0.0, scale, (4, dim)),
            k=k,
            channels=channels,
        )

    def copy(self) -> "DetectorParams":
        return DetectorParams(self.w_obj.copy(), self.w_box.copy(), self.k, self.channels)


@dataclass(frozen=True)
class DetectorGrad:
    w_obj: np.ndarray
    w_box: np.ndarray


@dataclass(frozen=True)
class LossGrad:
    loss: float
    cls_loss: float
    reg_loss: float
    grad: DetectorGrad


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.004
    iters: int = 10000
    batch_labeled: int = 32
    pos_iou: float = 0.5
    reg_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.iters < 1:
            raise ConfigError("iters must be >= 1")


class AnchorGrid:
    """One anchor per cell: centered on the cell, sized anchor_scale * cell size."""

    def __init__(self, grid: GridShape, image_h: int, image_w: int, anchor_scale: float = 3.0):
        if anchor_scale <= 0:
            raise ConfigError("anchor_scale must be > 0")
        self.grid = grid
        self.image_h = image_h
        self.image_w = image_w
        self.anchor_scale = anchor_scale
        sy = image_h / grid.rows
        sx = image_w / grid.cols
        cy, cx = np.meshgrid(
            (np.arange(grid.rows) + 0.5) * sy, (np.arange(grid.cols) + 0.5) * sx, indexing="ij"
        )
        n = grid.cells
        self.cxcywh = np.empty((n, 4), dtype=np.float64)
        self.cxcywh[:, 0] = cx.ravel()
        self.cxcywh[:, 1] = cy.ravel()
        self.cxcywh[:, 2] = anchor_scale * sx
        self.cxcywh[:, 3] = anchor_scale * sy

    def box(self, cell: int) -> BBox:
        cx, cy, w, h = self.cxcywh[cell]
        return BBox(cx - 0.5 * w, cy - 0.5 * h, w, h)


def encode_deltas(gt: BBox, anchor: BBox) -> tuple[float, float, float, float]:
    """Standard box parameterization of gt relative to anchor."""
    if anchor.w <= 0 or anchor.h <= 0 or gt.w <= 0 or gt.h <= 0:
        raise ValidationError("encode_deltas needs positive box sizes")
    return (
        (gt.cx - anchor.cx) / anchor.w,
        (gt.cy - anchor.cy) / anchor.h,
        math.log(gt.w / anchor.w),
        math.log(gt.h / anchor.h),
    )


def decode_deltas(deltas, anchor: BBox) -> BBox:
    tx, ty, tw, th = (float(d) for d in deltas)
    cx = anchor.cx + tx * anchor.w
    cy = anchor.cy + ty * anchor.h
    w = anchor.w * math.exp(min(max(tw, -DELTA_CLIP), DELTA_CLIP))
    h = anchor.h * math.exp(min(max(th, -DELTA_CLIP), DELTA_CLIP))
    return BBox(cx - 0.5 * w, cy - 0.5 * h, w, h)


def _features_array(features) -> np.ndarray:
    arr = features.values if isinstance(features, GridMap) else np.asarray(features)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return np.ascontiguousarray(arr, dtype=np.float64)


def design_matrices(features, k: int):
    return kernels.window_design(_features_array(features), k)


def forward_arrays(features, params: DetectorParams, anchors: AnchorGrid):
    """Fast path: per-cell scores and decoded xywh boxes as arrays (row-major)."""
    arr = _features_array(features)
    if arr.shape[2] != params.channels:
        raise ValidationError(
            f"feature channels {arr.shape[2]} != detector channels {params.channels}"
        )
    if arr.shape[0] != anchors.grid.rows or arr.shape[1] != anchors.grid.cols:
        raise ValidationError("feature grid does not match the anchor grid")
    u, v = kernels.window_design(arr, params.k)
    scores, deltas = kernels.scores_deltas(u, v, params.w_obj, params.w_box)
    a = anchors.cxcywh
    cx = a[:, 0] + deltas[:, 0] * a[:, 2]
    cy = a[:, 1] + deltas[:, 1] * a[:, 3]
    w = a[:, 2] * np.exp(np.clip(deltas[:, 2], -DELTA_CLIP, DELTA_CLIP))
    h = a[:, 3] * np.exp(np.clip(deltas[:, 3], -DELTA_CLIP, DELTA_CLIP))
    boxes = np.stack([cx - 0.5 * w, cy - 0.5 * h, w, h], axis=1)
    return scores, boxes


def forward(features, params: DetectorParams, anchors: AnchorGrid) -> list[Detection]:
    """Per-cell detections in row-major cell order (pre-NMS)."""
    scores, boxes = forward_arrays(features, params, anchors)
    return [
        Detection(BBox(*boxes[i]), float(scores[i])) for i in range(scores.shape[0])
    ]


def assign_targets(anchors: AnchorGrid, labels: list[BBox], pos_iou: float):
    """Positive mask and encoded delta targets for a label set.

    A cell is positive when its anchor overlaps some label with IoU >= pos_iou
    or its center lies inside a label; every label additionally claims its
    nearest cell center so no label goes unsupervised.
    """
    n = anchors.cxcywh.shape[0]
    pos = np.zeros(n, dtype=np.float64)
    targets = np.zeros((n, 4), dtype=np.float64)
    if not labels:
        return pos, targets
    a = anchors.cxcywh
    ax1 = a[:, 0] - 0.5 * a[:, 2]
    ay1 = a[:, 1] - 0.5 * a[:, 3]
    ax2 = a[:, 0] + 0.5 * a[:, 2]
    ay2 = a[:, 1] + 0.5 * a[:, 3]
    area_a = a[:, 2] * a[:, 3]

    lab = np.array([[b.x, b.y, b.w, b.h] for b in labels], dtype=np.float64)
    lx1, ly1 = lab[:, 0], lab[:, 1]
    lx2, ly2 = lab[:, 0] + lab[:, 2], lab[:, 1] + lab[:, 3]
    area_l = lab[:, 2] * lab[:, 3]

    iw = np.maximum(0.0, np.minimum(ax2[:, None], lx2[None, :]) - np.maximum(ax1[:, None], lx1[None, :]))
    ih = np.maximum(0.0, np.minimum(ay2[:, None], ly2[None, :]) - np.maximum(ay1[:, None], ly1[None, :]))
    inter = iw * ih
    ious = inter / (area_a[:, None] + area_l[None, :] - inter)

    best = np.argmax(ious, axis=1)
    best_iou = ious[np.arange(n), best]
    inside = (
        (a[:, 0:1] >= lx1[None, :])
        & (a[:, 0:1] <= lx2[None, :])
        & (a[:, 1:2] >= ly1[None, :])
        & (a[:, 1:2] <= ly2[None, :])
    )
    positive = (best_iou >= pos_iou) | inside.any(axis=1)

    # a center-inside cell with zero best IoU cannot happen (anchors have area),
    # so `best` is a valid target label for every positive cell
    lcx = lab[:, 0] + 0.5 * lab[:, 2]
    lcy = lab[:, 1] + 0.5 * lab[:, 3]
    for li in range(lab.shape[0]):
        if not np.any(positive & (best == li)):
            d2 = (a[:, 0] - lcx[li]) ** 2 + (a[:, 1] - lcy[li]) ** 2
            cell = int(np.argmin(d2))  # row-major first on ties
            positive[cell] = True
            best[cell] = li

    pos[positive] = 1.0
    idx = np.flatnonzero(positive)
    tl = lab[best[idx]]
    aw = a[idx, 2]
    ah = a[idx, 3]
    targets[idx, 0] = (tl[:, 0] + 0.5 * tl[:, 2] - a[idx, 0]) / aw
    targets[idx, 1] = (tl[:, 1] + 0.5 * tl[:, 3] - a[idx, 1]) / ah
    targets[idx, 2] = np.log(tl[:, 2] / aw)
    targets[idx, 3] = np.log(tl[:, 3] / ah)
    return pos, targets


def supervised_loss_and_grad(
    features,
    labels: list[BBox],
    params: DetectorParams,
    anchors: AnchorGrid,
    cfg: TrainConfig,
    design=None,
    assignment=None,
) -> LossGrad:
    """Detection loss and closed-form gradient for one sample.

    `design`/`assignment` allow reuse of precomputed (U, V) and (pos, targets).
    Empty labels give a pure-negative image: BCE toward zero, no box gradient.
    """
    if design is None:
        arr = _features_array(features)
        if arr.shape[2] != params.channels:
            raise ValidationError(
                f"feature channels {arr.shape[2]} != detector channels {params.channels}"
            )
        design = kernels.window_design(arr, params.k)
    u, v = design
    if assignment is None:
        assignment = assign_targets(anchors, labels, cfg.pos_iou)
    pos, targets = assignment
    loss, cls_loss, reg_loss, g_obj, g_box = kernels.detection_loss_grad(
        u, v, params.w_obj, params.w_box, pos, targets, float(cfg.reg_weight)
    )
    return LossGrad(float(loss), float(cls_loss), float(reg_loss), DetectorGrad(g_obj, g_box))


def sgd_step(params: DetectorParams, grad: DetectorGrad, lr: float) -> DetectorParams:
    """Plain gradient descent: params - lr * grad, elementwise."""
    return DetectorParams(
        params.w_obj - lr * grad.w_obj,
        params.w_box - lr * grad.w_box,
        params.k,
        params.channels,
    )


def infer_top1(
    features,
    params: DetectorParams,
    anchors: AnchorGrid,
    nms_iou: float = 0.7,
    min_score: float = 0.05,
) -> Optional[Detection]:
    """Highest-scoring NMS survivor, or None when nothing clears min_score."""
    scores, boxes = forward_arrays(features, params, anchors)
    areas = boxes[:, 2] * boxes[:, 3]
    order = np.lexsort((np.arange(scores.shape[0]), -areas, -scores))
    # NMS cannot remove the globally best-ranked box, so the top survivor
    # is simply the first box in priority order
    i = int(order[0])
    if scores[i] <= min_score:
        return None
    return Detection(BBox(*boxes[i]), float(scores[i]))


def save_checkpoint(path, params: DetectorParams, anchor_scale: float, meta: dict) -> None:
    payload = {
        "k": params.k,
        "C": params.channels,
        "anchor_scale": anchor_scale,
        "w_obj": params.w_obj.tolist(),
        "w_box": [row.tolist() for row in params.w_box],
        "meta": meta,
    }
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True)
        fp.write("\n")
    os.replace(tmp, os.fspath(path))


def load_checkpoint(path) -> tuple[DetectorParams, float, dict]:
    with open(path) as fp:
        payload = json.load(fp)
    params = DetectorParams(
        np.array(payload["w_obj"], dtype=np.float64),
        np.array(payload["w_box"], dtype=np.float64),
        k=int(payload["k"]),
        channels=int(payload["C"]),
    )
    return params, float(payload["anchor_scale"]), payload.get("meta", {})
