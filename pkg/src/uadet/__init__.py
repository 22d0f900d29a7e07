"""Uncertainty-aware pseudo-label selection and self-training for a toy two-stage detector."""
from .geometry import Box, iou
from .kernels import BACKEND
from .mc_uncertainty import McDetectionSamples, candidates_for_image
from .records import CandidatePseudoLabel, Uncertainty
from .selection import SelectionParams, select_by_score, select_pseudo_labels

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Box", "CandidatePseudoLabel", "McDetectionSamples", "SelectionParams",
    "Uncertainty", "candidates_for_image", "iou", "select_by_score", "select_pseudo_labels",
]
