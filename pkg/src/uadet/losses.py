"""Detection, self-training and feature-alignment objectives.

Every function accepts plain numbers/arrays or :class:`~uadet.autodiff.Tensor`
inputs.  With tensor inputs the result is a tensor wired into the tape so the
same code serves evaluation and training; otherwise a float is returned.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import Box

EPS = 1e-7
SMOOTH_L1_BETA = 1.0

OBJECTIVE_MODES = {
    # name: (self-training variant, alignment variant)
    "M1": ("st", "fa"),
    "M2": ("ust", "ufa"),
    "FA+ST": ("st", "fa"),
    "UFA+ST": ("st", "ufa"),
    "FA+UST": ("ust", "fa"),
    "UFA+UST": ("ust", "ufa"),
}


def _any_tensor(*xs):
    return any(isinstance(x, ad.Tensor) for x in xs)


def _out(t, as_tensor):
    return t if as_tensor else float(t.data)


def _box_vec(b):
    if isinstance(b, Box):
        return b.as_array()
    return b


@dataclass
class LossBreakdown:
    det_source: float = 0.0
    det_target: float = 0.0
    img_align: float = 0.0
    ins_align: float = 0.0
    cst: float = 0.0
    lambda1: float = 0.001
    lambda2: float = 0.1
    total: float = 0.0
    graph: ad.Tensor = field(default=None, repr=False, compare=False)

    def recompute_total(self):
        return (self.det_source + self.lambda1 * self.det_target
                + self.lambda2 * (self.img_align + self.ins_align + self.cst))

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("det_source", "det_target", "img_align", "ins_align", "cst", "total")}


def instance_losses(log_probs, labels, reg_pred, reg_target):
    """Per-instance cross-entropy plus smooth-L1 regression (foreground only).

    ``log_probs`` is ``(R, n)``, ``labels`` ``(R,)`` integer ids with 0 as
    background, regression arrays ``(R, 4)``.  Returns an ``(R,)`` tensor.
    """
    labels = np.asarray(labels, dtype=np.int64)
    log_probs = ad.as_tensor(log_probs)
    if labels.size and (labels.min() < 0 or labels.max() >= log_probs.shape[-1]):
        raise ValueError("class id out of range")
    ce = -ad.take(log_probs, (np.arange(labels.size), labels))
    fg = (labels > 0).astype(np.float64)
    reg = ad.smooth_l1(ad.sub(reg_pred, reg_target), SMOOTH_L1_BETA).sum(axis=1) * fg
    return ce + reg


def instance_detection_loss(pred_scores, pred_box, label_class, label_box):
    """Loss of one prediction against one label.

    ``pred_scores`` is a probability vector; the log is clamped at ``EPS``.
    Boxes may be :class:`Box`, 4-arrays or tensors.
    """
    tensor = _any_tensor(pred_scores, pred_box)
    p = ad.as_tensor(pred_scores)
    n = p.shape[-1]
    if not 0 <= label_class < n:
        raise ValueError(f"class id {label_class} out of range for {n} classes")
    ce = -ad.log(ad.clip(p[label_class], EPS, 1.0))
    if label_class == 0:
        return _out(ce, tensor)
    diff = ad.sub(_box_vec(pred_box), _box_vec(label_box))
    return _out(ce + ad.smooth_l1(diff, SMOOTH_L1_BETA).sum(), tensor)


def target_detection_loss(inst_losses):
    """Unweighted target detection loss: sum of matched instance losses."""
    tensor = _any_tensor(inst_losses)
    return _out(ad.as_tensor(inst_losses).sum(), tensor)


def weighted_target_detection_loss(inst_losses, u_norms):
    """Sum of instance losses each weighted by ``1 - u_norm`` of its pseudo-label."""
    tensor = _any_tensor(inst_losses)
    inst = ad.as_tensor(inst_losses)
    u = np.asarray(u_norms, dtype=np.float64).reshape(-1)
    if inst.data.reshape(-1).shape[0] != u.shape[0]:
        raise ValueError(f"{inst.data.size} predictions but {u.shape[0]} pseudo-labels")
    return _out(ad.mul(inst, 1.0 - u).sum(), tensor)


def self_training_loss(det_source, det_target, lambda1=0.001):
    tensor = _any_tensor(det_source, det_target)
    return _out(ad.add(det_source, ad.mul(det_target, lambda1)), tensor)


def ust_loss(det_source, wdet_target, lambda1=0.001):
    """Self-training loss with the uncertainty-weighted target term."""
    return self_training_loss(det_source, wdet_target, lambda1)


def _neg_log_prob(p_logits, positive):
    # -log sigmoid(+-x), probability clamped into [EPS, 1 - EPS]
    prob = ad.sigmoid(p_logits if positive else ad.neg(p_logits))
    return -ad.log(ad.clip(prob, EPS, 1.0 - EPS))


def image_alignment_loss(src_domain_logits, tgt_domain_logits):
    """Per-position domain cross-entropy averaged over both maps (source = 1)."""
    tensor = _any_tensor(src_domain_logits, tgt_domain_logits)
    src = _neg_log_prob(ad.as_tensor(src_domain_logits), True)
    tgt = _neg_log_prob(ad.as_tensor(tgt_domain_logits), False)
    n = src.data.size + tgt.data.size
    return _out((src.sum() + tgt.sum()) * (1.0 / n), tensor)


def _check_mode(mode):
    if mode not in ("standard", "ufa"):
        raise ValueError(f"mode must be 'standard' or 'ufa', got {mode!r}")


def instance_alignment_loss(src_probs, tgt_probs, mode="standard"):
    """Instance-level domain loss over source label boxes and target boxes.

    In ``standard`` mode the target boxes are proposals, in ``ufa`` mode the
    selected pseudo-labels; the formula is the same.  An empty target set
    leaves only the source term.
    """
    _check_mode(mode)
    tensor = _any_tensor(src_probs, tgt_probs)
    src = ad.as_tensor(src_probs)
    tgt = ad.as_tensor(tgt_probs)
    total = ad.Tensor(0.0)
    if src.data.size:
        total = total - ad.log(ad.clip(src, EPS, 1.0)).sum()
    if tgt.data.size:
        total = total - ad.log(ad.clip(1.0 - tgt, EPS, 1.0)).sum()
    return _out(total, tensor)


def consistency_loss(img_map_mean, ins_probs, mode="standard"):
    """Mean absolute gap between the image-level mean and each instance probability."""
    _check_mode(mode)
    tensor = _any_tensor(img_map_mean, ins_probs)
    ins = ad.as_tensor(ins_probs)
    if ins.data.size == 0:
        return _out(ad.Tensor(0.0), tensor)
    return _out(ad.absolute(ad.sub(img_map_mean, ins)).mean(), tensor)


def combined_objective(det_source, det_target=0.0, img_align=0.0, ins_align=0.0, cst=0.0,
                       mode="M1", lambda1=0.001, lambda2=0.1):
    """Joint self-training and feature-alignment objective.

    ``mode`` names which target terms the caller supplied (``M1`` = plain
    self-training with proposal alignment, ``M2`` = weighted self-training
    with pseudo-label alignment, or one of the four ablation crossings).  The
    weighting of the parts is the same in every mode.
    """
    if mode not in OBJECTIVE_MODES:
        raise ValueError(f"unknown objective mode {mode!r}")
    parts = (det_source, det_target, img_align, ins_align, cst)
    tensor = _any_tensor(*parts)
    ds, dt, li, ln, lc = (ad.as_tensor(p) for p in parts)
    total = ds + dt * lambda1 + (li + ln + lc) * lambda2
    return LossBreakdown(
        det_source=float(ds.data), det_target=float(dt.data), img_align=float(li.data),
        ins_align=float(ln.data), cst=float(lc.data), lambda1=lambda1, lambda2=lambda2,
        total=float(total.data), graph=total if tensor else None,
    )
