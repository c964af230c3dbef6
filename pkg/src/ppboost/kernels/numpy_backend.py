"""Pure-NumPy implementations of the hot kernels.

Reference semantics for the numba backend: same signatures, float64 in/out.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def upsample_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize with edge clamping."""
    in_h, in_w = src.shape
    r = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    c = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    r = np.clip(r, 0.0, in_h - 1.0)
    c = np.clip(c, 0.0, in_w - 1.0)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    top = src[r0[:, None], c0[None, :]] * (1.0 - fc) + src[r0[:, None], c1[None, :]] * fc
    bot = src[r1[:, None], c0[None, :]] * (1.0 - fc) + src[r1[:, None], c1[None, :]] * fc
    return top * (1.0 - fr) + bot * fr


def upsample_nearest(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize: floor of the half-pixel source coordinate."""
    in_h, in_w = src.shape
    r = np.floor((np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5 + 0.5)
    c = np.floor((np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5 + 0.5)
    r = np.clip(r, 0, in_h - 1).astype(np.int64)
    c = np.clip(c, 0, in_w - 1).astype(np.int64)
    return src[r[:, None], c[None, :]].astype(np.float64)


def nms_keep(boxes: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy suppression over boxes already sorted into keep-priority order.

    boxes: (n, 4) float64 xywh. Returns a bool mask; a box is kept iff its IoU
    with every previously kept box is <= iou_threshold.
    """
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return keep
    x1 = boxes[:, 0]
    y1 = boxes[:, 1]
    x2 = x1 + boxes[:, 2]
    y2 = y1 + boxes[:, 3]
    areas = boxes[:, 2] * boxes[:, 3]
    suppressed = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if suppressed[i]:
            continue
        keep[i] = True
        if i + 1 == n:
            break
        xx1 = np.maximum(x1[i], x1[i + 1 :])
        yy1 = np.maximum(y1[i], y1[i + 1 :])
        xx2 = np.minimum(x2[i], x2[i + 1 :])
        yy2 = np.minimum(y2[i], y2[i + 1 :])
        iw = np.maximum(0.0, xx2 - xx1)
        ih = np.maximum(0.0, yy2 - yy1)
        inter = iw * ih
        iou = inter / (areas[i] + areas[i + 1 :] - inter)
        suppressed[i + 1 :] |= iou > iou_threshold
    return keep


def window_design(features: np.ndarray, k: int):
    """Per-cell k x k windows split into mirror-symmetric / antisymmetric parts.

    features: (rows, cols, C), edge-replicated padding. Returns (U, V), each
    (cells, k*k*C + 1): U = symmetric part with a trailing bias 1, V =
    antisymmetric part with a trailing 0. Flattening order is (dr, dc, c).
    """
    gh, gw, c = features.shape
    h = k // 2
    padded = np.pad(features, ((h, h), (h, h), (0, 0)), mode="edge")
    win = sliding_window_view(padded, (k, k), axis=(0, 1))  # (gh, gw, c, k, k)
    win = win.transpose(0, 1, 3, 4, 2)  # (gh, gw, k, k, c)
    d = k * k * c
    x = win.reshape(gh * gw, d)
    xm = win[:, :, :, ::-1, :].reshape(gh * gw, d)
    u = np.empty((gh * gw, d + 1), dtype=np.float64)
    v = np.empty((gh * gw, d + 1), dtype=np.float64)
    u[:, :d] = 0.5 * (x + xm)
    u[:, d] = 1.0
    v[:, :d] = 0.5 * (x - xm)
    v[:, d] = 0.0
    return u, v


def scores_deltas(u: np.ndarray, v: np.ndarray, w_obj: np.ndarray, w_box: np.ndarray):
    """Objectness scores and box deltas for every cell.

    tx reads the antisymmetric design row (V); ty/tw/th and objectness read
    the symmetric row (U), so horizontal flips commute with the forward pass.
    """
    scores = _sigmoid(u @ w_obj)
    cells = u.shape[0]
    deltas = np.empty((cells, 4), dtype=np.float64)
    deltas[:, 0] = v @ w_box[0]
    deltas[:, 1] = u @ w_box[1]
    deltas[:, 2] = u @ w_box[2]
    deltas[:, 3] = u @ w_box[3]
    return scores, deltas


def detection_loss_grad(
    u: np.ndarray,
    v: np.ndarray,
    w_obj: np.ndarray,
    w_box: np.ndarray,
    pos: np.ndarray,
    targets: np.ndarray,
    reg_weight: float,
):
    """Mean BCE objectness loss + smooth-L1 delta regression, closed-form grads.

    pos: (cells,) 0/1 assignment, targets: (cells, 4) encoded deltas (rows for
    negative cells are ignored). Returns (loss, cls_loss, reg_loss, g_obj, g_box).
    """
    n = u.shape[0]
    z = u @ w_obj
    p = _sigmoid(z)
    cls_loss = float(np.mean(np.logaddexp(0.0, z) - pos * z))
    g_obj = u.T @ (p - pos) / n

    g_box = np.zeros_like(w_box)
    reg_loss = 0.0
    npos = float(pos.sum())
    if npos > 0:
        m = pos > 0
        um = u[m]
        vm = v[m]
        pred = np.empty((um.shape[0], 4), dtype=np.float64)
        pred[:, 0] = vm @ w_box[0]
        pred[:, 1] = um @ w_box[1]
        pred[:, 2] = um @ w_box[2]
        pred[:, 3] = um @ w_box[3]
        d = pred - targets[m]
        ad = np.abs(d)
        sl1 = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)
        reg_loss = float(sl1.sum() / (4.0 * npos))
        gd = np.clip(d, -1.0, 1.0) * (reg_weight / (4.0 * npos))
        g_box[0] = vm.T @ gd[:, 0]
        g_box[1] = um.T @ gd[:, 1]
        g_box[2] = um.T @ gd[:, 2]
        g_box[3] = um.T @ gd[:, 3]
    loss = cls_loss + reg_weight * reg_loss
    return loss, cls_loss, reg_loss, g_obj, g_box


def count_within_tol(a: np.ndarray, b: np.ndarray, tol: float) -> int:
    """How many points of `a` lie within Euclidean `tol` of some point of `b`."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0
    tol2 = tol * tol
    count = 0
    for start in range(0, a.shape[0], 256):
        chunk = a[start : start + 256]
        d2 = ((chunk[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        count += int((d2.min(axis=1) <= tol2).sum())
    return count
