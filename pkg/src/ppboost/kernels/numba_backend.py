"""Numba @njit twins of the numpy kernels.

Same signatures and float64 semantics as numpy_backend; no fastmath so both
backends stay within ordinary float tolerance of each other.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def upsample_bilinear(src, out_h, out_w):
    in_h, in_w = src.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    scale_r = in_h / out_h
    scale_c = in_w / out_w
    for i in range(out_h):
        r = (i + 0.5) * scale_r - 0.5
        if r < 0.0:
            r = 0.0
        if r > in_h - 1.0:
            r = in_h - 1.0
        r0 = int(np.floor(r))
        r1 = r0 + 1
        if r1 > in_h - 1:
            r1 = in_h - 1
        fr = r - r0
        for j in range(out_w):
            c = (j + 0.5) * scale_c - 0.5
            if c < 0.0:
                c = 0.0
            if c > in_w - 1.0:
                c = in_w - 1.0
            c0 = int(np.floor(c))
            c1 = c0 + 1
            if c1 > in_w - 1:
                c1 = in_w - 1
            fc = c - c0
            top = src[r0, c0] * (1.0 - fc) + src[r0, c1] * fc
            bot = src[r1, c0] * (1.0 - fc) + src[r1, c1] * fc
            out[i, j] = top * (1.0 - fr) + bot * fr
    return out


@njit(cache=True)
def upsample_nearest(src, out_h, out_w):
    in_h, in_w = src.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    scale_r = in_h / out_h
    scale_c = in_w / out_w
    for i in range(out_h):
        r = int(np.floor((i + 0.5) * scale_r))
        if r < 0:
            r = 0
        if r > in_h - 1:
            r = in_h - 1
        for j in range(out_w):
            c = int(np.floor((j + 0.5) * scale_c))
            if c < 0:
                c = 0
            if c > in_w - 1:
                c = in_w - 1
            out[i, j] = src[r, c]
    return out


@njit(cache=True)
def nms_keep(boxes, iou_threshold):
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    suppressed = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if suppressed[i]:
            continue
        keep[i] = True
        x1i = boxes[i, 0]
        y1i = boxes[i, 1]
        x2i = x1i + boxes[i, 2]
        y2i = y1i + boxes[i, 3]
        area_i = boxes[i, 2] * boxes[i, 3]
        for j in range(i + 1, n):
            if suppressed[j]:
                continue
            xx1 = max(x1i, boxes[j, 0])
            yy1 = max(y1i, boxes[j, 1])
            xx2 = min(x2i, boxes[j, 0] + boxes[j, 2])
            yy2 = min(y2i, boxes[j, 1] + boxes[j, 3])
            iw = xx2 - xx1
            ih = yy2 - yy1
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            iou = inter / (area_i + boxes[j, 2] * boxes[j, 3] - inter)
            if iou > iou_threshold:
                suppressed[j] = True
    return keep


@njit(cache=True)
def window_design(features, k):
    gh, gw, c = features.shape
    d = k * k * c
    half = k // 2
    u = np.empty((gh * gw, d + 1), dtype=np.float64)
    v = np.empty((gh * gw, d + 1), dtype=np.float64)
    for i in range(gh):
        for j in range(gw):
            cell = i * gw + j
            for dr in range(k):
                r = i + dr - half
                if r < 0:
                    r = 0
                if r > gh - 1:
                    r = gh - 1
                for dc in range(k):
                    col = j + dc - half
                    if col < 0:
                        col = 0
                    if col > gw - 1:
                        col = gw - 1
                    mcol = j + (k - 1 - dc) - half
                    if mcol < 0:
                        mcol = 0
                    if mcol > gw - 1:
                        mcol = gw - 1
                    base = (dr * k + dc) * c
                    for ch in range(c):
                        a = features[r, col, ch]
                        b = features[r, mcol, ch]
                        u[cell, base + ch] = 0.5 * (a + b)
                        v[cell, base + ch] = 0.5 * (a - b)
            u[cell, d] = 1.0
            v[cell, d] = 0.0
    return u, v


@njit(cache=True)
def _sigmoid_scalar(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True)
def scores_deltas(u, v, w_obj, w_box):
    cells, dim = u.shape
    scores = np.empty(cells, dtype=np.float64)
    deltas = np.empty((cells, 4), dtype=np.float64)
    for i in range(cells):
        z = 0.0
        tx = 0.0
        ty = 0.0
        tw = 0.0
        th = 0.0
        for j in range(dim):
            uj = u[i, j]
            z += uj * w_obj[j]
            tx += v[i, j] * w_box[0, j]
            ty += uj * w_box[1, j]
            tw += uj * w_box[2, j]
            th += uj * w_box[3, j]
        scores[i] = _sigmoid_scalar(z)
        deltas[i, 0] = tx
        deltas[i, 1] = ty
        deltas[i, 2] = tw
        deltas[i, 3] = th
    return scores, deltas


@njit(cache=True)
def detection_loss_grad(u, v, w_obj, w_box, pos, targets, reg_weight):
    cells, dim = u.shape
    g_obj = np.zeros(dim, dtype=np.float64)
    g_box = np.zeros((4, dim), dtype=np.float64)
    cls_loss = 0.0
    reg_loss = 0.0
    npos = 0.0
    for i in range(cells):
        if pos[i] > 0.0:
            npos += 1.0
    for i in range(cells):
        z = 0.0
        for j in range(dim):
            z += u[i, j] * w_obj[j]
        # softplus(z) - y*z, numerically stable
        if z > 0.0:
            cls_loss += z + np.log1p(np.exp(-z)) - pos[i] * z
        else:
            cls_loss += np.log1p(np.exp(z)) - pos[i] * z
        coef = _sigmoid_scalar(z) - pos[i]
        for j in range(dim):
            g_obj[j] += coef * u[i, j]
        if pos[i] > 0.0:
            tx = 0.0
            ty = 0.0
            tw = 0.0
            th = 0.0
            for j in range(dim):
                tx += v[i, j] * w_box[0, j]
                ty += u[i, j] * w_box[1, j]
                tw += u[i, j] * w_box[2, j]
                th += u[i, j] * w_box[3, j]
            for m in range(4):
                if m == 0:
                    dm = tx - targets[i, 0]
                elif m == 1:
                    dm = ty - targets[i, 1]
                elif m == 2:
                    dm = tw - targets[i, 2]
                else:
                    dm = th - targets[i, 3]
                ad = abs(dm)
                if ad < 1.0:
                    reg_loss += 0.5 * dm * dm
                else:
                    reg_loss += ad - 0.5
                gcoef = dm
                if gcoef > 1.0:
                    gcoef = 1.0
                if gcoef < -1.0:
                    gcoef = -1.0
                gcoef *= reg_weight / (4.0 * npos)
                if m == 0:
                    for j in range(dim):
                        g_box[0, j] += gcoef * v[i, j]
                else:
                    for j in range(dim):
                        g_box[m, j] += gcoef * u[i, j]
    cls_loss /= cells
    for j in range(dim):
        g_obj[j] /= cells
    if npos > 0.0:
        reg_loss /= 4.0 * npos
    loss = cls_loss + reg_weight * reg_loss
    return loss, cls_loss, reg_loss, g_obj, g_box


@njit(cache=True)
def count_within_tol(a, b, tol):
    na = a.shape[0]
    nb = b.shape[0]
    if na == 0 or nb == 0:
        return 0
    tol2 = tol * tol
    count = 0
    for i in range(na):
        for j in range(nb):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            if dx * dx + dy * dy <= tol2:
                count += 1
                break
    return count
