"""Value types shared by the uncertainty and selection stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box


@dataclass(frozen=True)
class Uncertainty:
    """Predictive variance of one proposal.

    ``u_raw`` is ``u_c + u_l``; ``u_norm`` is filled in by per-image
    min-max normalization and stays 0 until then.
    """

    u_c: float
    u_l: float
    u_raw: float
    u_norm: float = 0.0

    def __post_init__(self):
        if self.u_c < 0 or self.u_l < 0:
            raise ValueError("variances must be non-negative")
        if not 0.0 <= self.u_norm <= 1.0:
            raise ValueError(f"u_norm must lie in [0, 1], got {self.u_norm}")


@dataclass(frozen=True)
class CandidatePseudoLabel:
    box: Box
    label: int
    detection_score: float
    uncertainty: Uncertainty
    selection_score: float = None
    mean_scores: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.label < 1:
            raise ValueError("pseudo-label class must be a foreground id (>= 1)")
        if self.selection_score is None:
            object.__setattr__(self, "selection_score", self.detection_score)
        if self.selection_score > self.detection_score:
            raise ValueError("selection score cannot exceed the detection score")

    @property
    def u_norm(self):
        return self.uncertainty.u_norm
