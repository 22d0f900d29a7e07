"""Monte-Carlo dropout aggregation and predictive-variance uncertainty."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box, EmptyBoxError, clip
from .records import CandidatePseudoLabel, Uncertainty

BACKGROUND = 0


class EmptySamplesError(ValueError):
    pass


@dataclass(frozen=True)
class McDetectionSamples:
    """T aligned stochastic passes for one proposal.

    ``scores`` is ``(T, n)`` softmax output (column 0 is background) and
    ``boxes`` is ``(T, 4)`` decoded boxes as cx, cy, w, h.
    """

    scores: np.ndarray
    boxes: np.ndarray
    proposal: Box = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        boxes = np.asarray(self.boxes, dtype=np.float64)
        if scores.ndim == 1:
            scores = scores[None, :]
        if boxes.ndim == 1:
            boxes = boxes[None, :]
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "boxes", boxes)
        if scores.shape[0] == 0:
            raise EmptySamplesError("no stochastic passes")
        if scores.shape[0] != boxes.shape[0]:
            raise ValueError(f"{scores.shape[0]} score vectors but {boxes.shape[0]} boxes")
        if scores.shape[1] < 2:
            raise ValueError("score vectors need at least two entries")
        if boxes.shape[1] != 4:
            raise ValueError("boxes must have four coordinates")
        if (scores < 0).any() or np.abs(scores.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("every score vector must be a probability vector")

    @property
    def num_passes(self):
        return self.scores.shape[0]


def aggregate_mc(s: McDetectionSamples):
    """Mean score vector and mean box over the passes."""
    if s.scores.shape[0] == 0:
        raise EmptySamplesError("no stochastic passes")
    mean_box = s.boxes.mean(axis=0)
    return s.scores.mean(axis=0), Box.from_array(mean_box)


def _second_moment_gap(x):
    # (1/T) sum x_t.x_t - xbar.xbar, evaluated on passes shifted by the first
    # one: the value is shift invariant and identical passes give exactly 0
    d = x - x[0]
    dbar = d.mean(axis=0)
    return max(float(np.einsum("ij,ij->", d, d) / d.shape[0] - dbar @ dbar), 0.0)


def predictive_uncertainty(s: McDetectionSamples) -> Uncertainty:
    if s.scores.shape[0] == 0:
        raise EmptySamplesError("no stochastic passes")
    u_c = _second_moment_gap(s.scores)
    u_l = _second_moment_gap(s.boxes)
    return Uncertainty(u_c=u_c, u_l=u_l, u_raw=u_c + u_l)


def normalize_uncertainties(us):
    """Min-max normalize ``u_raw`` over one image's candidates into ``u_norm``."""
    us = list(us)
    if not us:
        raise ValueError("cannot normalize an empty set of uncertainties")
    raw = np.array([u.u_raw for u in us])
    lo, hi = raw.min(), raw.max()
    if hi - lo < 1e-12:
        return [replace(u, u_norm=0.0) for u in us]
    norm = np.clip((raw - lo) / (hi - lo), 0.0, 1.0)
    return [replace(u, u_norm=float(v)) for u, v in zip(us, norm)]


def candidate_from_mc(s: McDetectionSamples):
    """Build a candidate pseudo-label, or ``None`` when background wins the argmax."""
    mean_scores, mean_box = aggregate_mc(s)
    label = int(np.argmax(mean_scores))
    if label == BACKGROUND:
        return None
    try:
        box = clip(mean_box)
    except EmptyBoxError:
        return None
    return CandidatePseudoLabel(
        box=box,
        label=label,
        detection_score=float(mean_scores[label]),
        uncertainty=predictive_uncertainty(s),
        mean_scores=mean_scores,
    )


def candidates_for_image(samples):
    """Candidates for all proposals of one image with per-image ``u_norm`` set."""
    cands = [c for c in (candidate_from_mc(s) for s in samples) if c is not None]
    if not cands:
        return []
    normed = normalize_uncertainties([c.uncertainty for c in cands])
    return [replace(c, uncertainty=u) for c, u in zip(cands, normed)]
