"""Teacher-student semi-supervised detector training.

Burn-in trains the student on labeled pairs only; the teacher is then forked
from the student and updated purely by EMA while the student learns from a
combined loss: supervised on strongly augmented labeled samples plus
consistency against teacher pseudo-labels (predicted on the weak view, scored
against the student's strong view of the same sample, flip state shared).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .detector import (
    AnchorGrid,
    DetectorGrad,
    DetectorParams,
    TrainConfig,
    forward_arrays,
    sgd_step,
    supervised_loss_and_grad,
)
from .rng import rng_from
from .types import BBox, ConfigError, GridShape, SampleRecord, TrainingDiverged, ValidationError


@dataclass(frozen=True)
class AugConfig:
    """Weak = horizontal flip only; strong adds Gaussian feature noise and
    cell dropout. Flips always apply identically to paired boxes."""

    hflip_p: float = 0.5
    noise_sigma: float = 0.1
    cell_dropout: float = 0.1


@dataclass(frozen=True)
class SemiSupConfig:
    labeled_fraction: float = 0.10
    burn_in_iters: int = 800
    unsup_weight: float = 1.5
    ema_decay: float = 0.9996
    pl_score_min: float = 0.7
    pl_nms_iou: float = 0.7
    batch_labeled: int = 32
    batch_unlabeled: int = 32
    aug: AugConfig = field(default_factory=AugConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ConfigError("labeled_fraction must be in (0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must be in [0, 1)")
        if self.unsup_weight < 0:
            raise ConfigError("unsup_weight must be >= 0")


@dataclass(frozen=True)
class TrainSample:
    """In-memory training item: features plus an optional box label."""

    sample_id: str
    features: np.ndarray  # (rows, cols, channels) float64
    box: Optional[BBox] = None


def split_dataset(
    kept: list[tuple[SampleRecord, BBox]],
    all_samples: list[SampleRecord],
    fraction: float,
    seed: int,
) -> tuple[list[tuple[SampleRecord, BBox]], list[SampleRecord]]:
    """Seeded labeled/unlabeled split.

    labeled: ceil(fraction * |kept|) kept pairs; unlabeled: every other sample
    (kept-but-unselected and filtered-out alike), boxes discarded.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("labeled fraction must be in (0, 1]")
    ids = {rec.sample_id for rec in all_samples}
    for rec, _ in kept:
        if rec.sample_id not in ids:
            raise ValidationError(f"kept sample {rec.sample_id!r} is not in the dataset")
    if not kept:
        raise ValidationError("need >= 1 labeled sample (kept set is empty)")
    m = math.ceil(fraction * len(kept))
    rng = rng_from(seed)
    chosen = sorted(rng.permutation(len(kept))[:m].tolist())
    labeled = [kept[i] for i in chosen]
    labeled_ids = {rec.sample_id for rec, _ in labeled}
    unlabeled = [rec for rec in all_samples if rec.sample_id not in labeled_ids]
    return labeled, unlabeled


def hflip_features(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr[:, ::-1, :])


def hflip_box(box: BBox, image_w: float) -> BBox:
    return BBox(image_w - box.x - box.w, box.y, box.w, box.h)


def pseudo_label_boxes(
    scores: np.ndarray, boxes: np.ndarray, nms_iou: float, score_min: float
) -> np.ndarray:
    """NMS survivors at or above the confidence gate, as an (n, 4) array.

    Gating before NMS is exactly equivalent to NMS-then-gate here: suppression
    priority is score-sorted, so a gated survivor can only ever be suppressed
    by a box that itself clears the gate.
    """
    m = scores >= score_min
    if not m.any():
        return np.empty((0, 4), dtype=np.float64)
    scores = scores[m]
    boxes = boxes[m]
    areas = boxes[:, 2] * boxes[:, 3]
    order = np.lexsort((np.arange(scores.shape[0]), -areas, -scores))
    keep = kernels.nms_keep(np.ascontiguousarray(boxes[order]), float(nms_iou))
    return boxes[order[keep]]


def teacher_pseudo_labels(
    features, teacher: DetectorParams, anchors: AnchorGrid, cfg: SemiSupConfig
) -> list[BBox]:
    """High-confidence teacher detections on a weak view, scores dropped."""
    scores, boxes = forward_arrays(features, teacher, anchors)
    kept = pseudo_label_boxes(scores, boxes, cfg.pl_nms_iou, cfg.pl_score_min)
    return [BBox(*row) for row in kept]


def ema_update(teacher: DetectorParams, student: DetectorParams, alpha: float) -> DetectorParams:
    """Elementwise alpha * teacher + (1 - alpha) * student."""
    if teacher.w_obj.shape != student.w_obj.shape or teacher.w_box.shape != student.w_box.shape:
        raise ValidationError("teacher/student parameter shapes differ")
    return DetectorParams(
        alpha * teacher.w_obj + (1.0 - alpha) * student.w_obj,
        alpha * teacher.w_box + (1.0 - alpha) * student.w_box,
        teacher.k,
        teacher.channels,
    )


def _augment_strong(arr, flip, noise, drop_mask, image_w, box, aug):
    """Shared-flip strong view; returns (features, flipped box or None)."""
    view = hflip_features(arr) if flip else arr
    view = view + aug.noise_sigma * noise
    view = np.where(drop_mask[:, :, None], 0.0, view)
    b = None
    if box is not None:
        b = hflip_box(box, image_w) if flip else box
    return np.ascontiguousarray(view), b


def train_semisup(
    labeled: list[TrainSample],
    unlabeled: list[TrainSample],
    cfg: SemiSupConfig,
    tcfg: TrainConfig,
    image_h: int,
    image_w: int,
    k: int = 3,
    anchor_scale: float = 3.0,
) -> tuple[DetectorParams, DetectorParams, list[dict]]:
    """Run the burn-in + teacher-student schedule; returns (student, teacher, log).

    The log has one entry per iteration: iter, l_sup, l_unsup, n_pseudo.
    RNG draws occur in a fixed order independent of unsup_weight, so a
    unsup_weight=0 run matches supervised-only training bit for bit.
    """
    if not labeled:
        raise ValidationError("need >= 1 labeled sample")
    if any(s.box is None for s in labeled):
        raise ValidationError("every labeled sample needs a box")
    shapes = {s.features.shape for s in labeled} | {s.features.shape for s in unlabeled}
    if len(shapes) != 1:
        raise ValidationError(f"training requires a uniform feature grid, got {shapes}")
    gh, gw, c = labeled[0].features.shape
    grid = GridShape(gh, gw, c)
    anchors = AnchorGrid(grid, image_h, image_w, anchor_scale)
    rng = rng_from(cfg.seed)
    student = DetectorParams.random_init(k, c, rng)
    teacher: Optional[DetectorParams] = None

    lam = float(cfg.unsup_weight)
    log: list[dict] = []
    aug = cfg.aug
    for it in range(1, tcfg.iters + 1):
        # fixed draw order per iteration: labeled idx/flip/noise/dropout,
        # then (post burn-in) the same four for the unlabeled batch
        lab_idx = rng.integers(0, len(labeled), size=cfg.batch_labeled)
        lab_flip = rng.random(cfg.batch_labeled) < aug.hflip_p
        lab_noise = rng.standard_normal((cfg.batch_labeled, gh, gw, c))
        lab_drop = rng.random((cfg.batch_labeled, gh, gw)) < aug.cell_dropout

        g_obj = np.zeros(student.dim)
        g_box = np.zeros((4, student.dim))
        l_sup = 0.0
        for b in range(cfg.batch_labeled):
            s = labeled[lab_idx[b]]
            feats, box = _augment_strong(
                s.features, lab_flip[b], lab_noise[b], lab_drop[b], image_w, s.box, aug
            )
            lg = supervised_loss_and_grad(feats, [box], student, anchors, tcfg)
            l_sup += lg.loss
            g_obj += lg.grad.w_obj
            g_box += lg.grad.w_box
        l_sup /= cfg.batch_labeled
        g_obj /= cfg.batch_labeled
        g_box /= cfg.batch_labeled

        l_unsup = 0.0
        n_pseudo = 0
        if it > cfg.burn_in_iters and unlabeled:
            unl_idx = rng.integers(0, len(unlabeled), size=cfg.batch_unlabeled)
            unl_flip = rng.random(cfg.batch_unlabeled) < aug.hflip_p
            unl_noise = rng.standard_normal((cfg.batch_unlabeled, gh, gw, c))
            unl_drop = rng.random((cfg.batch_unlabeled, gh, gw)) < aug.cell_dropout
            gu_obj = np.zeros(student.dim)
            gu_box = np.zeros((4, student.dim))
            contributing = 0
            for b in range(cfg.batch_unlabeled):
                s = unlabeled[unl_idx[b]]
                weak = hflip_features(s.features) if unl_flip[b] else s.features
                pls = teacher_pseudo_labels(weak, teacher, anchors, cfg)
                n_pseudo += len(pls)
                if not pls:
                    continue
                strong, _ = _augment_strong(
                    s.features, unl_flip[b], unl_noise[b], unl_drop[b], image_w, None, aug
                )
                lg = supervised_loss_and_grad(strong, pls, student, anchors, tcfg)
                l_unsup += lg.loss
                gu_obj += lg.grad.w_obj
                gu_box += lg.grad.w_box
                contributing += 1
            if contributing:
                l_unsup /= contributing
                g_obj += lam * gu_obj / contributing
                g_box += lam * gu_box / contributing

        total = l_sup + lam * l_unsup
        if not np.isfinite(total):
            raise TrainingDiverged(
                f"iter {it}: non-finite loss (l_sup={l_sup}, l_unsup={l_unsup})"
            )
        student = sgd_step(student, DetectorGrad(g_obj, g_box), tcfg.lr)

        if it == cfg.burn_in_iters:
            teacher = student.copy()
        elif it > cfg.burn_in_iters and teacher is not None:
            teacher = ema_update(teacher, student, cfg.ema_decay)

        log.append({"iter": it, "l_sup": l_sup, "l_unsup": l_unsup, "n_pseudo": n_pseudo})

    if teacher is None:
        teacher = student.copy()
    return student, teacher, log
