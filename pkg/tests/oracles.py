"""Independent reference implementations used as test oracles.

Written from the textbook definitions without sharing code with the package.
"""
import math


def box_iou(a, b):
    ax1, ax2 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay1, ay2 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx1, bx2 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by1, by2 = b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)


def soft_nms(boxes, scores, tau1, tau2, sigma, k):
    """Gated Gaussian soft-NMS; returns [(index, final score)] best first."""
    pool = {i: float(s) for i, s in enumerate(scores)}
    out = []
    while pool:
        best = max(pool, key=lambda i: (pool[i], scores[i], -i))
        out.append((best, pool.pop(best)))
        for i in list(pool):
            o = box_iou(boxes[best], boxes[i])
            if o >= tau1:
                pool[i] *= math.exp(-o * o / sigma)
                if pool[i] < tau2:
                    del pool[i]
    out.sort(key=lambda t: (-t[1], -scores[t[0]], t[0]))
    return out[:k]


def hard_nms(boxes, scores, thr, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(box_iou(boxes[i], boxes[j]) < thr for j in keep):
            keep.append(i)
    return keep[:k]


def brute_force_ap(flags, n_gt):
    """AP by enumerating every rank cut-off and taking the precision envelope."""
    if n_gt <= 0 or not flags:
        return 0.0
    pts = []
    tp = 0
    for r, f in enumerate(flags, start=1):
        tp += int(f)
        pts.append((tp / n_gt, tp / r))
    ap, prev_recall = 0.0, 0.0
    for recall in sorted({p[0] for p in pts}):
        if recall <= prev_recall:
            continue
        best = max(p for rc, p in pts if rc >= recall)
        ap += (recall - prev_recall) * best
        prev_recall = recall
    return ap
