"""A small two-stage detector built on the reverse-mode tape.

Backbone: two 3x3 conv + ReLU + 2x2 max-pool stages (1 -> 8 -> 16 channels),
giving an 8x8 feature map for 32x32 input.  A 1x1 proposal head scores one
anchor per cell and regresses its box; the top-P cells become proposals.
Proposals are pooled with bilinear ROI-align and fed to a two-layer MLP ROI
head with dropout between the layers, followed by class and box heads.  Two
domain discriminators sit behind gradient reversal: a per-cell MLP on the
feature map and an MLP on the ROI head's hidden features.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import Box, clip_array, decode, iou_matrix
from .kernels import hard_nms
from .mc_uncertainty import McDetectionSamples


class NumericError(FloatingPointError):
    """Non-finite values appeared in a named layer."""


@dataclass(frozen=True)
class Architecture:
    image_size: int = 32
    n_classes: int = 3  # foreground classes; score vectors carry one more for background
    n_proposals: int = 16
    anchor_size: float = 0.25
    roi_grid: int = 3
    hidden: int = 64
    dropout: float = 0.3
    img_disc_hidden: int = 16
    ins_disc_hidden: int = 32
    disc_dropout: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.dropout < 1.0:
            raise ValueError("ROI-head dropout rate must lie in (0, 1)")
        if self.image_size % 4:
            raise ValueError("image size must be divisible by 4")

    @property
    def fmap_size(self):
        return self.image_size // 4

    @property
    def n_scores(self):
        return self.n_classes + 1

    @property
    def roi_dim(self):
        return 16 * self.roi_grid * self.roi_grid


def _param_shapes(a: Architecture):
    return {
        "conv1_w": (8, 1, 3, 3), "conv1_b": (8,),
        "conv2_w": (16, 8, 3, 3), "conv2_b": (16,),
        "rpn_w": (16, 5), "rpn_b": (5,),
        "fc1_w": (a.roi_dim, a.hidden), "fc1_b": (a.hidden,),
        "fc2_w": (a.hidden, a.hidden), "fc2_b": (a.hidden,),
        "cls_w": (a.hidden, a.n_scores), "cls_b": (a.n_scores,),
        "reg_w": (a.hidden, 4), "reg_b": (4,),
        "dimg1_w": (16, a.img_disc_hidden), "dimg1_b": (a.img_disc_hidden,),
        "dimg2_w": (a.img_disc_hidden, 1), "dimg2_b": (1,),
        "dins1_w": (a.hidden, a.ins_disc_hidden), "dins1_b": (a.ins_disc_hidden,),
        "dins2_w": (a.ins_disc_hidden, 1), "dins2_b": (1,),
    }


BACKBONE = ("conv1_w", "conv1_b", "conv2_w", "conv2_b")
ROI_HEAD = ("fc1_w", "fc1_b", "fc2_w", "fc2_b", "cls_w", "cls_b", "reg_w", "reg_b")
DISCRIMINATORS = ("dimg1_w", "dimg1_b", "dimg2_w", "dimg2_b",
                  "dins1_w", "dins1_b", "dins2_w", "dins2_b")


@dataclass
class DetectorParams:
    arch: Architecture
    tensors: dict = field(default_factory=dict)

    @classmethod
    def init(cls, arch: Architecture = Architecture(), rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        tensors = {}
        for name, shape in _param_shapes(arch).items():
            if name.endswith("_b"):
                data = np.zeros(shape)
            elif name in ("cls_w", "reg_w", "rpn_w"):
                data = rng.normal(0.0, 0.01, size=shape)
            else:
                fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
                data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            tensors[name] = ad.Tensor(data, requires_grad=True, name=name)
        return cls(arch, tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def arrays(self):
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self):
        return DetectorParams(self.arch, {k: ad.Tensor(t.data.copy(), requires_grad=True, name=k)
                                          for k, t in self.tensors.items()})

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None


# layers

def _check(name, t):
    data = t.data if isinstance(t, ad.Tensor) else t
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite activations in layer {name!r}")
    return t


def backbone(p: DetectorParams, images):
    """Feature maps ``(N, 16, S, S)`` for images ``(N, H, W)``."""
    x = ad.Tensor(np.asarray(images, dtype=np.float64)[:, None, :, :])
    x = ad.max_pool2d(ad.relu(ad.conv2d(x, p["conv1_w"], p["conv1_b"])))
    _check("conv1", x)
    x = ad.max_pool2d(ad.relu(ad.conv2d(x, p["conv2_w"], p["conv2_b"])))
    return _check("conv2", x)


def _cells(fmap):
    n, c, s, _ = fmap.shape
    return ad.transpose(ad.reshape(fmap, (n, c, s * s)), (0, 2, 1))  # N, S*S, C


def rpn_head(p: DetectorParams, fmap):
    """Objectness logits ``(N, S*S)`` and anchor deltas ``(N, S*S, 4)``."""
    out = _check("rpn", _cells(fmap) @ p["rpn_w"] + p["rpn_b"])
    return out[:, :, 0], out[:, :, 1:]


def anchors(arch: Architecture):
    s = arch.fmap_size
    c = (np.arange(s) + 0.5) / s
    cy, cx = np.meshgrid(c, c, indexing="ij")
    a = np.full(s * s, arch.anchor_size)
    return np.stack([cx.ravel(), cy.ravel(), a, a], axis=1)


def propose(arch: Architecture, obj_logits, deltas):
    """Top-P anchors by objectness, decoded and clipped.  Plain arrays in and out."""
    order = np.argsort(-obj_logits, kind="stable")[: arch.n_proposals]
    boxes = decode(deltas[order], anchors(arch)[order])
    return clip_array(boxes), order


def roi_sampling_matrix(boxes, grid, fmap_size):
    """Bilinear ROI-align weights: ``(R * grid^2, S*S)`` over feature cells."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    r = boxes.shape[0]
    frac = (np.arange(grid) + 0.5) / grid
    x1 = boxes[:, 0] - 0.5 * boxes[:, 2]
    y1 = boxes[:, 1] - 0.5 * boxes[:, 3]
    xs = x1[:, None] + frac[None, :] * boxes[:, 2:3]  # R, g
    ys = y1[:, None] + frac[None, :] * boxes[:, 3:4]
    px = np.broadcast_to(xs[:, None, :], (r, grid, grid)).reshape(-1)
    py = np.broadcast_to(ys[:, :, None], (r, grid, grid)).reshape(-1)
    fx = np.clip(px * fmap_size - 0.5, 0.0, fmap_size - 1.0)
    fy = np.clip(py * fmap_size - 0.5, 0.0, fmap_size - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1i = np.minimum(x0 + 1, fmap_size - 1)
    y1i = np.minimum(y0 + 1, fmap_size - 1)
    wx, wy = fx - x0, fy - y0
    mat = np.zeros((px.size, fmap_size * fmap_size))
    rows = np.arange(px.size)
    for yy, xx, w in ((y0, x0, (1 - wy) * (1 - wx)), (y0, x1i, (1 - wy) * wx),
                      (y1i, x0, wy * (1 - wx)), (y1i, x1i, wy * wx)):
        np.add.at(mat, (rows, yy * fmap_size + xx), w)
    return mat


def roi_features(p: DetectorParams, cells_i, boxes):
    """Pooled features ``(R, roi_dim)`` from one image's cell features ``(S*S, C)``."""
    a = p.arch
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    mat = roi_sampling_matrix(boxes, a.roi_grid, a.fmap_size)
    pooled = mat @ cells_i  # R*g*g, C
    return ad.reshape(pooled, (boxes.shape[0], a.roi_dim))


def roi_head(p: DetectorParams, feats, rng=None):
    """Hidden features, class logits and box deltas for pooled ROI features."""
    h = ad.relu(feats @ p["fc1_w"] + p["fc1_b"])
    h = ad.dropout(h, p.arch.dropout, rng)
    h = _check("fc2", ad.relu(h @ p["fc2_w"] + p["fc2_b"]))
    return h, _check("cls", h @ p["cls_w"] + p["cls_b"]), _check("reg", h @ p["reg_w"] + p["reg_b"])


def image_discriminator(p: DetectorParams, fmap, grl_lambda=1.0, rng=None):
    """Per-cell domain logits ``(N, S*S)``; positive means source."""
    x = _cells(ad.grl(fmap, grl_lambda))
    h = ad.dropout(ad.relu(x @ p["dimg1_w"] + p["dimg1_b"]), p.arch.disc_dropout, rng)
    out = h @ p["dimg2_w"] + p["dimg2_b"]
    return _check("d_img", ad.reshape(out, out.shape[:2]))


def instance_discriminator(p: DetectorParams, hidden, grl_lambda=1.0, rng=None):
    """Per-instance domain logits ``(R,)`` from ROI hidden features."""
    x = ad.grl(hidden, grl_lambda)
    h = ad.dropout(ad.relu(x @ p["dins1_w"] + p["dins1_b"]), p.arch.disc_dropout, rng)
    out = h @ p["dins2_w"] + p["dins2_b"]
    return _check("d_ins", ad.reshape(out, (out.shape[0],)))


@dataclass
class ForwardOutput:
    feature_map: np.ndarray
    proposals: np.ndarray
    scores: np.ndarray
    boxes: np.ndarray
    img_domain_logits: np.ndarray
    ins_domain_logits: np.ndarray


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(p: DetectorParams, image, dropout=None):
    """Inference pass on one image.

    ``dropout`` is ``None`` (deterministic) or a numpy Generator used to
    sample the ROI-head dropout mask.
    """
    a = p.arch
    fmap = backbone(p, np.asarray(image)[None])
    obj, deltas = rpn_head(p, fmap)
    proposals, _ = propose(a, obj.data[0], deltas.data[0])
    hidden, logits, reg = roi_head(p, roi_features(p, _cells(fmap)[0], proposals), dropout)
    img_logits = image_discriminator(p, fmap)
    ins_logits = instance_discriminator(p, hidden)
    s = a.fmap_size
    return ForwardOutput(
        feature_map=fmap.data[0],
        proposals=proposals,
        scores=_softmax(logits.data),
        boxes=decode(reg.data, proposals),
        img_domain_logits=img_logits.data[0].reshape(s, s),
        ins_domain_logits=ins_logits.data,
    )


def mc_inference(p: DetectorParams, image, T, rng):
    """T stochastic ROI-head passes over one deterministic proposal set.

    Returns one :class:`McDetectionSamples` per proposal.
    """
    if T < 1:
        raise ValueError(f"need at least one stochastic pass, got T={T}")
    a = p.arch
    fmap = backbone(p, np.asarray(image)[None])
    obj, deltas = rpn_head(p, fmap)
    proposals, _ = propose(a, obj.data[0], deltas.data[0])
    feats = roi_features(p, _cells(fmap)[0], proposals).data
    w = p.arrays()
    h1 = np.maximum(feats @ w["fc1_w"] + w["fc1_b"], 0.0)
    mask = (rng.random((T,) + h1.shape) >= a.dropout) / (1.0 - a.dropout)
    h2 = np.maximum((h1[None] * mask) @ w["fc2_w"] + w["fc2_b"], 0.0)
    scores = _softmax(h2 @ w["cls_w"] + w["cls_b"])  # T, R, n
    boxes = decode(h2 @ w["reg_w"] + w["reg_b"], proposals[None])
    _check("mc_scores", scores)
    return [McDetectionSamples(scores[:, r], boxes[:, r], Box.from_array(proposals[r]))
            for r in range(proposals.shape[0])]


def detect(p: DetectorParams, image, nms_iou=0.5, min_score=0.01):
    """Deterministic detections ``[(label, score, box_array), ...]`` after per-class NMS."""
    out = forward(p, image)
    boxes = clip_array(out.boxes)
    dets = []
    for c in range(1, p.arch.n_scores):
        sc = out.scores[:, c]
        keep = [int(i) for i in hard_nms(np.ascontiguousarray(boxes), sc, nms_iou) if sc[i] >= min_score]
        dets.extend((c, float(sc[i]), boxes[i]) for i in keep)
    return dets


# target assignment

FG_IOU, BG_IOU = 0.5, 0.3
IGNORE = -1


def assign_targets(proposals, label_boxes, label_classes):
    """Match proposals to labels.

    Returns ``(classes, matched)``: per proposal the target class (0 for
    background, ``IGNORE`` for the 0.3-0.5 IoU band) and the index of the
    matched label (-1 when none).  Every label claims its best proposal.
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    label_boxes = np.asarray(label_boxes, dtype=np.float64).reshape(-1, 4)
    label_classes = np.asarray(label_classes, dtype=np.int64).reshape(-1)
    r = proposals.shape[0]
    classes = np.zeros(r, dtype=np.int64)
    matched = np.full(r, -1, dtype=np.int64)
    if label_boxes.shape[0] == 0 or r == 0:
        return classes, matched
    ov = iou_matrix(proposals, label_boxes)
    best = ov.argmax(axis=1)
    best_ov = ov[np.arange(r), best]
    fg = best_ov >= FG_IOU
    classes[fg] = label_classes[best[fg]]
    matched[fg] = best[fg]
    classes[(best_ov >= BG_IOU) & ~fg] = IGNORE
    for g in range(label_boxes.shape[0]):
        i = int(ov[:, g].argmax())
        if ov[i, g] > 0:
            classes[i] = label_classes[g]
            matched[i] = g
    return classes, matched


# checkpoints
#
# Layout: the 8-byte magic b"UADETCK1", a little-endian uint32 header length,
# a UTF-8 JSON header {"arch": {...}, "tensors": [{"name", "shape"}, ...]},
# then every tensor's float64 little-endian data in header order.

_MAGIC = b"UADETCK1"


def save_checkpoint(path, p: DetectorParams):
    header = {"arch": asdict(p.arch),
              "tensors": [{"name": k, "shape": list(t.shape)} for k, t in p.tensors.items()]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in p.tensors.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a uadet checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
            tensors[spec["name"]] = ad.Tensor(data, requires_grad=True, name=spec["name"])
    return DetectorParams(Architecture(**header["arch"]), tensors)
