"""Evaluation kernels: Dice, Normalized Surface Dice, and the single-class
average-precision family, plus EvalReport assembly."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .boxgeom import iou
from .types import BBox, ConfigError, Detection, Mask, ValidationError

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class NsdConfig:
    tolerance_px: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.tolerance_px) or self.tolerance_px < 0:
            raise ConfigError("NSD tolerance must be finite and >= 0")


def dice(a: Mask, b: Mask) -> float:
    """2|A n B| / (|A| + |B|); two empty masks count as a perfect 1.0."""
    if a.bits.shape != b.bits.shape:
        raise ValidationError(f"mask dims differ: {a.bits.shape} vs {b.bits.shape}")
    na = int(a.bits.sum())
    nb = int(b.bits.sum())
    if na == 0 and nb == 0:
        return 1.0
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return 2.0 * inter / (na + nb)


def boundary_coords(mask: Mask) -> np.ndarray:
    """(n, 2) row/col coordinates of foreground pixels 4-adjacent to background
    or to the image edge."""
    m = mask.bits > 0
    padded = np.pad(m, 1, constant_values=False)
    inner = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return np.argwhere(m & ~inner).astype(np.float64)


def nsd(a: Mask, b: Mask, cfg: NsdConfig) -> float:
    """Symmetric fraction of boundary pixels within tolerance of the other
    mask's boundary (Euclidean pixel-center distance)."""
    if a.bits.shape != b.bits.shape:
        raise ValidationError(f"mask dims differ: {a.bits.shape} vs {b.bits.shape}")
    ea = a.foreground_count == 0
    eb = b.foreground_count == 0
    if ea and eb:
        return 1.0
    if ea or eb:
        return 0.0
    ba = np.ascontiguousarray(boundary_coords(a))
    bb = np.ascontiguousarray(boundary_coords(b))
    tol = float(cfg.tolerance_px)
    close_a = kernels.count_within_tol(ba, bb, tol)
    close_b = kernels.count_within_tol(bb, ba, tol)
    return (close_a + close_b) / (ba.shape[0] + bb.shape[0])


def average_precision(
    dets: list[tuple[str, Detection]],
    gts: list[tuple[str, BBox]],
    iou_thresholds=COCO_THRESHOLDS,
) -> dict:
    """All-points-interpolated AP per IoU threshold, single-instance regime.

    Detections are ranked by descending score (ties by sample_id); each greedily
    matches its sample's GT when still unmatched and IoU >= threshold. mAP is
    the mean over the thresholds passed in.
    """
    if not gts:
        raise ValidationError("average_precision: GT set is empty")
    gt_by_sample: dict[str, BBox] = {}
    for sid, box in gts:
        if sid in gt_by_sample:
            raise ValidationError(f"multiple GT boxes for sample {sid!r}")
        gt_by_sample[sid] = box

    ranked = sorted(enumerate(dets), key=lambda t: (-t[1][1].score, t[1][0], t[0]))
    n_gt = len(gt_by_sample)
    ap_per_threshold = {}
    for t in iou_thresholds:
        matched: set[str] = set()
        tp = np.zeros(len(ranked))
        for r, (_, (sid, det)) in enumerate(ranked):
            g = gt_by_sample.get(sid)
            if g is not None and sid not in matched and iou(det.box, g) >= t:
                matched.add(sid)
                tp[r] = 1.0
        cum_tp = np.cumsum(tp)
        ranks = np.arange(1, len(ranked) + 1)
        precision = cum_tp / ranks
        recall = cum_tp / n_gt
        ap_per_threshold[float(t)] = _envelope_area(recall, precision)
    values = list(ap_per_threshold.values())
    return {"ap_per_threshold": ap_per_threshold, "mAP": float(np.mean(values)) if values else 0.0}


def _envelope_area(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the precision envelope over all recall points."""
    if recall.size == 0:
        return 0.0
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = 0.0
    area = 0.0
    for r, p in zip(recall, env):
        if r > prev:
            area += (r - prev) * p
            prev = r
    return float(area)


def detection_metrics(
    dets: list[tuple[str, Detection]], gts: list[tuple[str, BBox]]
) -> dict:
    res = average_precision(dets, gts, COCO_THRESHOLDS)
    return {
        "mAP": res["mAP"],
        "AP50": res["ap_per_threshold"][0.5],
        "AP75": res["ap_per_threshold"][0.75],
    }


def build_eval_report(
    per_sample: list[dict],
    detection: dict | None,
    config_snapshot: dict,
) -> dict:
    """Assemble the report; aggregates are plain means over per-sample rows."""
    rows = sorted(per_sample, key=lambda r: r["sample_id"])
    mdsc = float(np.mean([r["dice"] for r in rows])) if rows else 0.0
    mnsd = float(np.mean([r["nsd"] for r in rows])) if rows else 0.0
    return {
        "per_sample": rows,
        "aggregates": {"mDSC": mdsc, "mNSD": mnsd},
        "detection": detection,
        "config": config_snapshot,
    }


def write_eval_report(path, report: dict) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fp:
        json.dump(report, fp, indent=2, sort_keys=True)
        fp.write("\n")
    os.replace(tmp, os.fspath(path))


def write_per_sample_csv(path, report: dict) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["sample_id", "dice", "nsd"])
        for row in report["per_sample"]:
            writer.writerow([row["sample_id"], repr(row["dice"]), repr(row["nsd"])])
    os.replace(tmp, os.fspath(path))


def write_metric_svg(path, report: dict, bins: int = 10) -> None:
    """Deterministic bar chart of the per-sample Dice/NSD distributions."""
    width, height, pad = 640, 240, 30
    panels = []
    for pi, key in enumerate(("dice", "nsd")):
        values = [r[key] for r in report["per_sample"]]
        counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
        peak = max(int(counts.max()), 1) if len(values) else 1
        x0 = pad + pi * (width // 2)
        bar_w = (width // 2 - 2 * pad) / bins
        bars = []
        for i, cnt in enumerate(counts):
            bh = (height - 2 * pad) * (int(cnt) / peak)
            bx = x0 + i * bar_w
            by = height - pad - bh
            bars.append(
                f'<rect x="{bx:.2f}" y="{by:.2f}" width="{bar_w - 2:.2f}" '
                f'height="{bh:.2f}" fill="#4878a8"/>'
            )
        label = "Dice" if key == "dice" else "NSD"
        bars.append(
            f'<text x="{x0:.2f}" y="{pad - 10}" font-size="12" '
            f'font-family="monospace">{label} distribution</text>'
        )
        panels.append("".join(bars))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        + "".join(panels)
        + "</svg>\n"
    )
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fp:
        fp.write(svg)
    os.replace(tmp, os.fspath(path))
