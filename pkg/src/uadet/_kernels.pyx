# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled selection kernels; see ``_kernels_py`` for the reference twin."""
import numpy as np
from libc.math cimport exp


def iou_matrix(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double ax1, ay1, ax2, ay2, bx1, by1, bx2, by2, iw, ih, inter, area_a
    for i in range(n):
        ax1 = a[i, 0] - 0.5 * a[i, 2]
        ay1 = a[i, 1] - 0.5 * a[i, 3]
        ax2 = a[i, 0] + 0.5 * a[i, 2]
        ay2 = a[i, 1] + 0.5 * a[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            bx1 = b[j, 0] - 0.5 * b[j, 2]
            by1 = b[j, 1] - 0.5 * b[j, 3]
            bx2 = b[j, 0] + 0.5 * b[j, 2]
            by2 = b[j, 1] + 0.5 * b[j, 3]
            iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
            ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
            if iw > 0.0 and ih > 0.0:
                inter = iw * ih
                o[i, j] = inter / (area_a + (bx2 - bx1) * (by2 - by1) - inter)
    return out


def soft_nms_select(const double[:, ::1] boxes, scores, det_scores, unc,
                    double tau1, double tau2, double sigma):
    cdef Py_ssize_t n = boxes.shape[0], i, m, remaining = n, k = 0
    ov_arr = iou_matrix(boxes, boxes)
    cdef double[:, ::1] ov = ov_arr
    s_arr = np.array(scores, dtype=np.float64)
    d_arr = np.ascontiguousarray(det_scores, dtype=np.float64)
    eu_arr = np.empty(n, dtype=np.float64)
    alive_arr = np.ones(n, dtype=np.uint8)
    order_arr = np.empty(n, dtype=np.int64)
    final_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] s = s_arr, d = d_arr, eu = eu_arr, final = final_arr
    cdef const double[::1] u = np.ascontiguousarray(unc, dtype=np.float64)
    cdef unsigned char[::1] alive = alive_arr
    cdef long long[::1] order = order_arr
    cdef double o
    for i in range(n):
        eu[i] = exp(u[i])
    while remaining > 0:
        m = -1
        for i in range(n):
            if not alive[i]:
                continue
            if m < 0 or s[i] > s[m] or (s[i] == s[m] and d[i] > d[m]):
                m = i
        alive[m] = 0
        remaining -= 1
        order[k] = m
        final[k] = s[m]
        k += 1
        for i in range(n):
            if alive[i] and ov[m, i] >= tau1:
                o = ov[m, i]
                s[i] = s[i] * exp(-(o * o) / sigma * eu[i])
                if s[i] < tau2:
                    alive[i] = 0
                    remaining -= 1
    return order_arr[:k].copy(), final_arr[:k].copy()


def hard_nms(const double[:, ::1] boxes, scores, double thr):
    cdef Py_ssize_t n = boxes.shape[0], i, j, idx
    ov_arr = iou_matrix(boxes, boxes)
    cdef double[:, ::1] ov = ov_arr
    order_np = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    cdef long long[::1] order = order_np.astype(np.int64)
    supp_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] supp = supp_arr
    keep = []
    for idx in range(n):
        i = order[idx]
        if supp[i]:
            continue
        keep.append(i)
        for j in range(n):
            if ov[i, j] >= thr:
                supp[j] = 1
    return np.asarray(keep, dtype=np.int64)
