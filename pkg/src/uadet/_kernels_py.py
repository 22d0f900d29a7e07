"""Pure-Python implementations of the selection kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``UADET_PURE_PYTHON`` is set.  Arithmetic is ordered exactly as in
``_kernels.pyx`` so both backends give bit-identical results.
"""
import math

import numpy as np


def iou_matrix(a, b):
    ax1 = a[:, 0] - 0.5 * a[:, 2]
    ay1 = a[:, 1] - 0.5 * a[:, 3]
    ax2 = a[:, 0] + 0.5 * a[:, 2]
    ay2 = a[:, 1] + 0.5 * a[:, 3]
    bx1 = b[:, 0] - 0.5 * b[:, 2]
    by1 = b[:, 1] - 0.5 * b[:, 3]
    bx2 = b[:, 0] + 0.5 * b[:, 2]
    by2 = b[:, 1] + 0.5 * b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    valid = (iw > 0.0) & (ih > 0.0)
    inter = np.where(valid, iw * ih, 0.0)
    # areas from the corner extents so that iou(b, b) is exactly 1
    union = ((ax2 - ax1) * (ay2 - ay1))[:, None] + ((bx2 - bx1) * (by2 - by1))[None, :] - inter
    return np.where(valid, inter / union, 0.0)


def soft_nms_select(boxes, scores, det_scores, unc, tau1, tau2, sigma):
    """Run the uncertainty-aware soft-NMS loop.

    Returns the popped candidate indices in pop order and their selection
    scores at the moment they were popped.
    """
    n = boxes.shape[0]
    ov = iou_matrix(boxes, boxes).tolist()
    s = [float(v) for v in scores]
    d = [float(v) for v in det_scores]
    eu = [math.exp(float(u)) for u in unc]
    alive = [True] * n
    remaining = n
    order, final = [], []
    while remaining:
        m = -1
        for i in range(n):
            if not alive[i]:
                continue
            if m < 0 or s[i] > s[m] or (s[i] == s[m] and d[i] > d[m]):
                m = i
        alive[m] = False
        remaining -= 1
        order.append(m)
        final.append(s[m])
        row = ov[m]
        for i in range(n):
            if alive[i] and row[i] >= tau1:
                o = row[i]
                s[i] = s[i] * math.exp(-(o * o) / sigma * eu[i])
                if s[i] < tau2:
                    alive[i] = False
                    remaining -= 1
    return np.asarray(order, dtype=np.int64), np.asarray(final, dtype=np.float64)


def hard_nms(boxes, scores, thr):
    """Greedy NMS suppressing neighbours with IoU >= ``thr``; returns kept indices."""
    n = boxes.shape[0]
    ov = iou_matrix(boxes, boxes)
    order = np.argsort(-np.asarray(scores), kind="stable")
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for m in order:
        if suppressed[m]:
            continue
        keep.append(int(m))
        suppressed |= ov[m] >= thr
    return np.asarray(keep, dtype=np.int64)
