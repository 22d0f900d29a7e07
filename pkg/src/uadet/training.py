"""Training of the toy detector: losses on the tape, momentum SGD, schedules.

A training step is split in two.  :func:`plan_step` makes every discrete
decision (proposals, label assignment, anchor targets, which boxes feed the
instance discriminator) from the current parameters without recording a
graph.  :func:`loss_graph` then builds the differentiable objective for a
fixed plan, which is what finite-difference checks perturb.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from .detector import (IGNORE, DetectorParams, NumericError, _cells, anchors, assign_targets,
                       backbone, image_discriminator, instance_discriminator, mc_inference,
                       propose, roi_features, roi_head, rpn_head)
from .geometry import encode
from .mc_uncertainty import candidates_for_image
from .selection import SelectionParams, select_by_score, select_pseudo_labels

log = logging.getLogger(__name__)

MODES = ("source-only", "FA+ST", "UFA+ST", "FA+UST", "UFA+UST", "oracle")
ADAPTED_MODES = ("FA+ST", "UFA+ST", "FA+UST", "UFA+UST")


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    grad_clip: float = 10.0
    pretrain_epochs: int = 5
    warmup_epochs: int = 5
    adapt_epochs: int = 3
    lambda1: float = 0.001
    lambda2: float = 0.1
    grl_lambda: float = 0.1
    adapt_lr_scale: float = 0.1
    mc_passes: int = 16
    score_threshold: float = 0.7
    seed: int = 0
    mode: str = "UFA+UST"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("pretrain_epochs", "warmup_epochs", "adapt_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lr < 0 or self.adapt_lr_scale < 0 or self.mc_passes < 1:
            raise ValueError("learning rates must be >= 0 and mc_passes >= 1")


@dataclass(frozen=True)
class StepSpec:
    """Which objective terms a step uses.

    ``st``: None, ``"st"`` (plain target loss) or ``"ust"`` (uncertainty
    weighted).  ``fa``: None, ``"fa"`` (instance alignment on proposals) or
    ``"ufa"`` (on pseudo-labels).
    """

    st: str = None
    fa: str = None

    @classmethod
    def for_mode(cls, mode):
        if mode in ("source-only", "oracle"):
            return cls()
        fa, st = mode.lower().split("+")
        return cls(st=st, fa=fa)

    @property
    def objective_mode(self):
        if self.st is None or self.fa is None:
            return "M1"
        return f"{self.fa.upper()}+{self.st.upper()}"


@dataclass
class TargetLabels:
    """Pseudo-labels for one target image.

    ``st`` feeds the target detection loss; ``align`` are the boxes the
    instance discriminator sees in ``ufa`` mode.
    """

    st: list = field(default_factory=list)
    align: list = field(default_factory=list)


@dataclass
class ImagePlan:
    roi_boxes: np.ndarray
    roi_classes: np.ndarray
    roi_targets: np.ndarray
    roi_weights: np.ndarray
    rpn_pos: np.ndarray
    rpn_targets: np.ndarray
    rpn_weights: np.ndarray
    ins_idx: np.ndarray
    n_proposals: int
    has_labels: bool


@dataclass
class StepPlan:
    images: np.ndarray
    source: ImagePlan
    target: ImagePlan = None


def _rpn_targets(arch, boxes, weights):
    s = arch.fmap_size
    pos = np.zeros(s * s, dtype=bool)
    targets = np.zeros((s * s, 4))
    w = np.zeros(s * s)
    anc = anchors(arch)
    for box, wt in zip(boxes, weights):
        cell = min(int(box[1] * s), s - 1) * s + min(int(box[0] * s), s - 1)
        pos[cell] = True
        targets[cell] = encode(box, anc[cell])
        w[cell] = wt
    return pos, targets, w


def _image_plan(p, obj, deltas, label_boxes, label_classes, label_u, extra_boxes, ins_mode):
    arch = p.arch
    proposals, _ = propose(arch, obj, deltas)
    label_boxes = np.asarray(label_boxes, dtype=np.float64).reshape(-1, 4)
    extra_boxes = np.asarray(extra_boxes, dtype=np.float64).reshape(-1, 4)
    roi_boxes = np.concatenate([proposals, label_boxes, extra_boxes])
    n_prop, n_lab = proposals.shape[0], label_boxes.shape[0]
    classes, matched = assign_targets(roi_boxes, label_boxes, label_classes)
    targets = np.zeros((roi_boxes.shape[0], 4))
    weights = np.ones(roi_boxes.shape[0])
    fg = matched >= 0
    if fg.any():
        targets[fg] = encode(label_boxes[matched[fg]], roi_boxes[fg])
        weights[fg] = 1.0 - np.asarray(label_u)[matched[fg]]
    pos, rpn_t, rpn_w = _rpn_targets(arch, label_boxes, 1.0 - np.asarray(label_u))
    if ins_mode == "labels":
        ins_idx = np.arange(n_prop, n_prop + n_lab)
    elif ins_mode == "extra":
        ins_idx = np.arange(n_prop + n_lab, roi_boxes.shape[0])
    else:
        ins_idx = np.arange(n_prop)
    return ImagePlan(roi_boxes, classes, targets, weights, pos, rpn_t, rpn_w, ins_idx, n_prop,
                     has_labels=n_lab > 0)


def plan_step(p: DetectorParams, src_image, src_labels, tgt_image=None,
              tgt_labels: TargetLabels = None, spec: StepSpec = StepSpec()):
    """Discrete, non-differentiable part of a training step.

    ``src_labels`` is a sequence of ``(label, Box)``.  The target image is
    only needed when ``spec`` uses alignment or self-training.
    """
    use_target = tgt_image is not None and (spec.fa is not None or spec.st is not None)
    images = np.stack([src_image, tgt_image]) if use_target else np.asarray(src_image)[None]
    fmap = backbone(p, images)
    obj, deltas = rpn_head(p, fmap)
    src_boxes = [b.as_array() for _, b in src_labels]
    src_cls = [lbl for lbl, _ in src_labels]
    source = _image_plan(p, obj.data[0], deltas.data[0], src_boxes, src_cls,
                         np.zeros(len(src_boxes)), [], "labels")
    target = None
    if use_target:
        tl = tgt_labels or TargetLabels()
        st = tl.st if spec.st is not None else []
        u = [c.u_norm if spec.st == "ust" else 0.0 for c in st]
        extra = [c.box.as_array() for c in tl.align] if spec.fa == "ufa" else []
        target = _image_plan(p, obj.data[1], deltas.data[1], [c.box.as_array() for c in st],
                             [c.label for c in st], u, extra,
                             "extra" if spec.fa == "ufa" else "proposals")
    return StepPlan(images=images, source=source, target=target)


def _detection_terms(log_probs, reg, obj, deltas, plan: ImagePlan):
    """RPN loss and per-instance ROI losses for one image."""
    pos = plan.rpn_pos
    neg = ~pos
    n_pos = max(int(pos.sum()), 1)
    w = plan.rpn_weights
    rpn_pos = (ad.softplus(-obj) * (w * pos)).sum() * (1.0 / n_pos)
    rpn_neg = (ad.softplus(obj) * neg.astype(np.float64)).sum() * (1.0 / max(int(neg.sum()), 1))
    reg_err = ad.smooth_l1(ad.sub(deltas, plan.rpn_targets), L.SMOOTH_L1_BETA).sum(axis=1)
    rpn_reg = (reg_err * (w * pos)).sum() * (1.0 / n_pos)
    keep = np.flatnonzero(plan.roi_classes != IGNORE)
    inst = L.instance_losses(ad.take(log_probs, keep), plan.roi_classes[keep],
                             ad.take(reg, keep), plan.roi_targets[keep])
    return rpn_pos + rpn_neg + rpn_reg, inst, plan.roi_weights[keep]


def loss_terms(p: DetectorParams, plan: StepPlan, spec: StepSpec, cfg: TrainingConfig, rng=None):
    """The five objective parts as tensors (plain 0.0 for parts the step does not use).

    ``rng=None`` turns dropout off.
    """
    fmap = backbone(p, plan.images)
    obj, deltas = rpn_head(p, fmap)
    cells = _cells(fmap)
    plans = [plan.source] + ([plan.target] if plan.target is not None else [])
    feats = ad.concat([roi_features(p, cells[i], ip.roi_boxes) for i, ip in enumerate(plans)])
    hidden, logits, reg = roi_head(p, feats, rng)
    log_probs = ad.log_softmax(logits)
    offsets = np.cumsum([0] + [ip.roi_boxes.shape[0] for ip in plans])

    def rows(i):
        return np.arange(offsets[i], offsets[i + 1])

    rpn_s, inst_s, _ = _detection_terms(ad.take(log_probs, rows(0)), ad.take(reg, rows(0)),
                                        obj[0], deltas[0], plan.source)
    terms = {"det_source": rpn_s + inst_s.mean() if inst_s.shape[0] else rpn_s,
             "det_target": 0.0, "img_align": 0.0, "ins_align": 0.0, "cst": 0.0}
    tp = plan.target
    if spec.st is not None and tp is not None and tp.has_labels:
        rpn_t, inst_t, w_t = _detection_terms(ad.take(log_probs, rows(1)), ad.take(reg, rows(1)),
                                              obj[1], deltas[1], tp)
        if spec.st == "ust":
            terms["det_target"] = rpn_t + L.weighted_target_detection_loss(inst_t, 1.0 - w_t)
        else:
            terms["det_target"] = rpn_t + L.target_detection_loss(inst_t)
    if spec.fa is not None and tp is not None:
        img_logits = image_discriminator(p, fmap, cfg.grl_lambda, rng)
        terms["img_align"] = L.image_alignment_loss(img_logits[0], img_logits[1])
        src_rows = offsets[0] + plan.source.ins_idx
        tgt_rows = offsets[1] + tp.ins_idx
        ins_logits = instance_discriminator(p, ad.take(hidden, np.concatenate([src_rows, tgt_rows])),
                                            cfg.grl_lambda, rng)
        ins_probs = ad.sigmoid(ins_logits)
        ns = src_rows.size
        src_p = ad.take(ins_probs, slice(0, ns))
        tgt_p = ad.take(ins_probs, slice(ns, None))
        mode = "ufa" if spec.fa == "ufa" else "standard"
        terms["ins_align"] = L.instance_alignment_loss(src_p, tgt_p, mode)
        img_mean = ad.sigmoid(img_logits).mean(axis=1)
        terms["cst"] = (L.consistency_loss(img_mean[0], src_p, mode)
                        + L.consistency_loss(img_mean[1], tgt_p, mode))
    return terms


def loss_graph(p: DetectorParams, plan: StepPlan, spec: StepSpec, cfg: TrainingConfig, rng=None):
    """Differentiable objective for a fixed plan; ``rng=None`` turns dropout off."""
    t = loss_terms(p, plan, spec, cfg, rng)
    return L.combined_objective(t["det_source"], t["det_target"], t["img_align"], t["ins_align"],
                                t["cst"], mode=spec.objective_mode,
                                lambda1=cfg.lambda1, lambda2=cfg.lambda2)


def make_optimizer(p: DetectorParams, cfg: TrainingConfig):
    return MomentumSGD(p, cfg.lr, cfg.momentum, cfg.weight_decay, cfg.grad_clip)


class MomentumSGD:
    """SGD with heavy-ball momentum, L2 weight decay and global-norm clipping."""

    def __init__(self, params: DetectorParams, lr, momentum=0.9, weight_decay=0.0, grad_clip=None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}

    def step(self):
        grads = {}
        for k, t in self.params.tensors.items():
            g = np.zeros_like(t.data) if t.grad is None else t.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {k!r}")
            grads[k] = g + self.weight_decay * t.data
        if self.grad_clip:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
        for k, t in self.params.tensors.items():
            v = self.velocity[k]
            v *= self.momentum
            v += grads[k]
            t.data = t.data - self.lr * v

    def fork(self, params: DetectorParams, lr=None):
        """Copy of the optimizer state bound to ``params`` (a copy of ours)."""
        out = MomentumSGD(params, self.lr if lr is None else lr, self.momentum,
                          self.weight_decay, self.grad_clip)
        out.velocity = {k: v.copy() for k, v in self.velocity.items()}
        return out


def train_step(p: DetectorParams, opt: MomentumSGD, source, target, spec: StepSpec,
               cfg: TrainingConfig, rng):
    """One optimizer step on a (source, target) pair.

    ``source`` is ``(image, labels)``; ``target`` is ``(image, TargetLabels)``
    or ``None``.  Parameters are updated in place and also returned.
    """
    tgt_image, tgt_labels = target if target is not None else (None, None)
    plan = plan_step(p, source[0], source[1], tgt_image, tgt_labels, spec)
    p.zero_grad()
    breakdown = loss_graph(p, plan, spec, cfg, rng)
    if not np.isfinite(breakdown.total):
        raise NumericError("non-finite loss")
    breakdown.graph.backward()
    opt.step()
    breakdown.graph = None
    return p, breakdown


def pseudo_label(p: DetectorParams, image, cfg: TrainingConfig, sel: SelectionParams, rng):
    """Pseudo-labels for one target image: ``(alg1_selection, score_selection)``."""
    cands = candidates_for_image(mc_inference(p, image, cfg.mc_passes, rng))
    return (select_pseudo_labels(cands, sel),
            select_by_score(cands, cfg.score_threshold, sel.k_max, sel.tau1))


def target_labels_for(spec: StepSpec, alg1, by_score):
    st = alg1 if spec.st == "ust" else by_score
    return TargetLabels(st=st if spec.st else [], align=alg1 if spec.fa == "ufa" else [])


def _mean_breakdown(items):
    keys = ("det_source", "det_target", "img_align", "ins_align", "cst", "total")
    return {k: float(np.mean([getattr(b, k) for b in items])) if items else 0.0 for k in keys}


def run_phase(p, opt, source_items, target_images, epochs, spec, cfg, sel, stream, seed):
    """Train ``epochs`` epochs; returns per-epoch mean loss breakdowns.

    ``source_items`` are ``(image, labels)`` pairs.  Pseudo-labels, when the
    step needs them, are regenerated once at the start of every epoch.
    ``stream`` keys the random streams so phases shared between modes draw
    identical randomness.
    """
    history = []
    n_src = len(source_items)
    drop_rng = np.random.default_rng(np.random.SeedSequence([seed, 100, stream]))
    for epoch in range(epochs):
        order_rng = np.random.default_rng(np.random.SeedSequence([seed, 200, stream, epoch]))
        order = order_rng.permutation(n_src)
        tgt_order = order_rng.permutation(len(target_images)) if target_images else None
        labels = None
        if spec.st is not None or spec.fa == "ufa":
            mc_rng = np.random.default_rng(np.random.SeedSequence([seed, 300, stream, epoch]))
            labels = [pseudo_label(p, img, cfg, sel, mc_rng) for img in target_images]
        items = []
        for k, i in enumerate(order):
            target = None
            if tgt_order is not None and (spec.fa is not None or spec.st is not None):
                j = int(tgt_order[k % len(tgt_order)])
                tl = target_labels_for(spec, *labels[j]) if labels is not None else TargetLabels()
                target = (target_images[j], tl)
            _, b = train_step(p, opt, source_items[i], target, spec, cfg, drop_rng)
            items.append(b)
        history.append(_mean_breakdown(items))
        log.debug("stream %s epoch %d: %s", stream, epoch, history[-1])
    return history
