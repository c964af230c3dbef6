"""Independent brute-force reference implementations.

Each oracle deliberately takes a different computational route from the
production code so agreement is meaningful: shapely polygons for IoU,
explicit pairwise suppression for NMS, set arithmetic for Dice, all-pairs
cdist for NSD, an explicit PR-curve walk for AP, central finite differences
for gradients, and per-pixel mapping loops for resizing.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from shapely.geometry import box as shapely_box


def iou_ref(a, b) -> float:
    pa = shapely_box(a.x, a.y, a.x2, a.y2)
    pb = shapely_box(b.x, b.y, b.x2, b.y2)
    inter = pa.intersection(pb).area
    union = pa.union(pb).area
    return inter / union if union > 0 else 0.0


def nms_ref(dets, iou_threshold):
    """Pairwise-suppression greedy reference with the documented tie-break."""
    indexed = list(enumerate(dets))
    indexed.sort(key=lambda t: (-t[1].score, -(t[1].box.w * t[1].box.h), t[0]))
    kept = []
    for _, det in indexed:
        if all(iou_ref(det.box, other.box) <= iou_threshold for other in kept):
            kept.append(det)
    return kept


def dice_ref(a, b) -> float:
    sa = {(int(r), int(c)) for r, c in np.argwhere(a.bits > 0)}
    sb = {(int(r), int(c)) for r, c in np.argwhere(b.bits > 0)}
    if not sa and not sb:
        return 1.0
    return 2.0 * len(sa & sb) / (len(sa) + len(sb))


def boundary_ref(mask) -> np.ndarray:
    """Explicit per-pixel scan for boundary pixels (4-adjacency, image edge)."""
    m = mask.bits > 0
    h, w = m.shape
    out = []
    for r in range(h):
        for c in range(w):
            if not m[r, c]:
                continue
            edge = r == 0 or r == h - 1 or c == 0 or c == w - 1
            if edge:
                out.append((r, c))
                continue
            if not (m[r - 1, c] and m[r + 1, c] and m[r, c - 1] and m[r, c + 1]):
                out.append((r, c))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def nsd_ref(a, b, tolerance) -> float:
    ea = int(a.bits.sum()) == 0
    eb = int(b.bits.sum()) == 0
    if ea and eb:
        return 1.0
    if ea or eb:
        return 0.0
    ba = boundary_ref(a)
    bb = boundary_ref(b)
    d = cdist(ba, bb)
    close_a = int((d.min(axis=1) <= tolerance).sum())
    close_b = int((d.min(axis=0) <= tolerance).sum())
    return (close_a + close_b) / (len(ba) + len(bb))


def ap_ref(dets, gts, threshold) -> float:
    """Explicit ranked PR walk with precision-envelope integration."""
    gt_by_sample = dict(gts)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1].score, dets[i][0], i))
    matched = set()
    points = []
    tp = 0
    for rank, i in enumerate(order, start=1):
        sid, det = dets[i]
        good = False
        if sid in gt_by_sample and sid not in matched:
            if iou_ref(det.box, gt_by_sample[sid]) >= threshold:
                good = True
                matched.add(sid)
        if good:
            tp += 1
        points.append((tp / len(gt_by_sample), tp / rank))
    ap = 0.0
    prev_recall = 0.0
    for j, (recall, _) in enumerate(points):
        if recall > prev_recall:
            best = max(p for r, p in points[j:] if r >= recall)
            ap += (recall - prev_recall) * best
            prev_recall = recall
    return ap


def upsample_bilinear_ref(src, out_h, out_w):
    in_h, in_w = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            r = min(max((i + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1.0)
            c = min(max((j + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1.0)
            r0, c0 = int(np.floor(r)), int(np.floor(c))
            r1, c1 = min(r0 + 1, in_h - 1), min(c0 + 1, in_w - 1)
            fr, fc = r - r0, c - c0
            out[i, j] = (
                src[r0, c0] * (1 - fr) * (1 - fc)
                + src[r0, c1] * (1 - fr) * fc
                + src[r1, c0] * fr * (1 - fc)
                + src[r1, c1] * fr * fc
            )
    return out


def fd_gradient(loss_fn, w0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar loss over a flat parameter vector."""
    g = np.zeros_like(w0)
    for i in range(w0.size):
        wp = w0.copy()
        wp[i] += h
        wm = w0.copy()
        wm[i] -= h
        g[i] = (loss_fn(wp) - loss_fn(wm)) / (2 * h)
    return g


def spearman_ref(x, y) -> float:
    """Rank correlation with average ranks for ties."""

    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i : j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0
