"""Pseudo-label selection: score thresholding and uncertainty-aware soft-NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .kernels import hard_nms, soft_nms_select
from .records import CandidatePseudoLabel

__all__ = [
    "CandidatePseudoLabel",
    "SelectionParams",
    "penalty_soft_nms",
    "penalty_uncertainty_aware",
    "select_by_score",
    "select_pseudo_labels",
]


@dataclass(frozen=True)
class SelectionParams:
    tau1: float = 0.3
    tau2: float = 0.001
    sigma: float = 0.4
    k_max: int = 20

    def __post_init__(self):
        if not 0.0 <= self.tau1 <= 1.0:
            raise ValueError(f"tau1 must lie in [0, 1], got {self.tau1}")
        if self.tau2 < 0:
            raise ValueError(f"tau2 must be >= 0, got {self.tau2}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError(f"k_max must be a positive integer, got {self.k_max}")


def penalty_soft_nms(s, ov, sigma):
    """Gaussian soft-NMS decay ``s * exp(-ov^2 / sigma)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return s * math.exp(-(ov * ov) / sigma)


def penalty_uncertainty_aware(s, ov, sigma, u):
    """Gaussian decay with its exponent amplified by ``exp(u)``.

    ``u`` is a normalized uncertainty; ``u = 0`` reproduces
    :func:`penalty_soft_nms` exactly.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"normalized uncertainty must lie in [0, 1], got {u}")
    return s * math.exp(-(ov * ov) / sigma * math.exp(u))


def _arrays(cands):
    boxes = np.array([[c.box.cx, c.box.cy, c.box.w, c.box.h] for c in cands], dtype=np.float64)
    scores = np.array([c.selection_score for c in cands], dtype=np.float64)
    det = np.array([c.detection_score for c in cands], dtype=np.float64)
    return boxes.reshape(-1, 4), scores, det


def _rank(cands, idx, scores):
    # selection score desc, then detection score desc, then candidate index
    keyed = sorted(zip(idx, scores), key=lambda p: (-p[1], -cands[p[0]].detection_score, p[0]))
    return keyed


def select_pseudo_labels(cands, p: SelectionParams = SelectionParams()):
    """Uncertainty-aware pseudo-label selection.

    Repeatedly moves the highest-scoring candidate to the output, decays the
    score of every remaining candidate overlapping it by at least ``tau1``
    and drops those falling below ``tau2``.  The top ``k_max`` of the output
    by final selection score are returned, best first.
    """
    cands = list(cands)
    if not cands:
        return []
    boxes, scores, det = _arrays(cands)
    unc = np.array([c.uncertainty.u_norm for c in cands], dtype=np.float64)
    if (unc < 0).any() or (unc > 1).any():
        raise ValueError("u_norm outside [0, 1]; normalize uncertainties first")
    order, final = soft_nms_select(boxes, scores, det, unc, p.tau1, p.tau2, p.sigma)
    ranked = _rank(cands, order.tolist(), final.tolist())[: p.k_max]
    return [replace(cands[i], selection_score=float(s)) for i, s in ranked]


def select_by_score(cands, threshold=0.7, k_max=20, tau1=0.3):
    """Detection-score selector: hard NMS at ``tau1``, score cut, top ``k_max``."""
    cands = list(cands)
    if not cands:
        return []
    boxes, _, det = _arrays(cands)
    keep = [int(i) for i in hard_nms(boxes, det, tau1) if det[i] >= threshold]
    ranked = _rank(cands, keep, [det[i] for i in keep])[:k_max]
    return [replace(cands[i], selection_score=cands[i].detection_score) for i, _ in ranked]
