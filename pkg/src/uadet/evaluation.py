"""Detection quality: greedy matching, all-points AP and mAP at IoU 0.5."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou_matrix


@dataclass
class EvalResult:
    per_class_ap: dict
    map: float
    counts: dict = field(default_factory=dict)  # class -> (tp, fp, fn)

    def as_dict(self):
        return {
            "map": self.map,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "counts": {str(k): list(v) for k, v in sorted(self.counts.items())},
        }


def _as_array(boxes):
    rows = [b.as_array() if isinstance(b, Box) else np.asarray(b, dtype=np.float64)
            for b in boxes]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def match_detections(preds, gts, iou_thr=0.5):
    """Greedy matching of score-sorted predictions to ground truth of one class.

    Each prediction takes the highest-IoU ground truth that is still
    unmatched, provided the IoU reaches ``iou_thr``.  Returns one boolean
    per prediction (True = true positive).
    """
    preds, gts = list(preds), list(gts)
    flags = np.zeros(len(preds), dtype=bool)
    if not preds or not gts:
        return flags
    ov = iou_matrix(_as_array(preds), _as_array(gts))
    used = np.zeros(len(gts), dtype=bool)
    for i in range(len(preds)):
        row = np.where(used, -1.0, ov[i])
        j = int(np.argmax(row))
        if row[j] >= iou_thr:
            used[j] = True
            flags[i] = True
    return flags


def average_precision(tp_flags, n_gt):
    """Area under the interpolated precision-recall curve (all points).

    ``tp_flags`` are ordered by descending score.
    """
    tp = np.asarray(tp_flags, dtype=np.float64)
    if n_gt <= 0 or tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def evaluate(detections, ground_truth, classes, iou_thr=0.5):
    """mAP over a set of images.

    ``detections[i]`` is a list of ``(label, score, Box)`` for image ``i`` and
    ``ground_truth[i]`` a list of ``(label, Box)``.  Classes without ground
    truth are left out of the mean.
    """
    per_class, counts = {}, {}
    for c in classes:
        scores, flags, n_gt = [], [], 0
        for img, (dets, gts) in enumerate(zip(detections, ground_truth)):
            gt_boxes = [b for lbl, b in gts if lbl == c]
            n_gt += len(gt_boxes)
            mine = [(s, k, b) for k, (lbl, s, b) in enumerate(dets) if lbl == c]
            mine.sort(key=lambda t: (-t[0], t[1]))
            f = match_detections([b for _, _, b in mine], gt_boxes, iou_thr)
            for (s, k, _), hit in zip(mine, f):
                scores.append((-s, img, k))
                flags.append(hit)
        order = sorted(range(len(scores)), key=scores.__getitem__)
        ranked = [flags[i] for i in order]
        tp = int(sum(ranked))
        counts[c] = (tp, len(ranked) - tp, n_gt - tp)
        if n_gt > 0:
            per_class[c] = average_precision(ranked, n_gt)
    m = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalResult(per_class_ap=per_class, map=m, counts=counts)
