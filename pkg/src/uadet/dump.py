"""Detection dumps: Monte-Carlo detector outputs stored as JSON, and selection on them.

Dump layout (``schema`` 1)::

    {"schema": 1,
     "images": [
       {"id": "img-0",
        "proposals": [
          {"box": [cx, cy, w, h],
           "scores": [[p_bg, p_1, ...], ...],   # T score vectors
           "boxes": [[cx, cy, w, h], ...]},     # T boxes
          ...]},
       ...]}

Every proposal of an image must carry the same number of passes T.  The
selection output mirrors it: per image the selected boxes with class,
selection score, detection score and normalized uncertainty.
"""
from __future__ import annotations

import json

import numpy as np

from .detector import mc_inference
from .geometry import Box
from .mc_uncertainty import McDetectionSamples, candidates_for_image
from .selection import SelectionParams, select_pseudo_labels

SCHEMA = 1


class DumpFormatError(ValueError):
    """Schema violation; the message names the image id and field path."""


def _matrix(value, path, cols=None):
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise DumpFormatError(f"{path}: expected a numeric matrix") from None
    if arr.ndim != 2 or arr.shape[0] == 0 or (cols is not None and arr.shape[1] != cols):
        want = f"(T, {cols})" if cols else "(T, n)"
        raise DumpFormatError(f"{path}: expected shape {want}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DumpFormatError(f"{path}: non-finite value")
    return arr


def parse_dump(doc):
    """Validate a dump document; returns ``[(image_id, [McDetectionSamples, ...]), ...]``."""
    if not isinstance(doc, dict):
        raise DumpFormatError("<root>: expected an object")
    if doc.get("schema") != SCHEMA:
        raise DumpFormatError(f"<root>.schema: expected {SCHEMA}, got {doc.get('schema')!r}")
    images = doc.get("images")
    if not isinstance(images, list):
        raise DumpFormatError("<root>.images: expected a list")
    out = []
    for i, img in enumerate(images):
        if not isinstance(img, dict) or "id" not in img:
            raise DumpFormatError(f"images[{i}].id: missing image id")
        iid = str(img["id"])
        where = f"image {iid!r}: images[{i}]"
        props = img.get("proposals")
        if not isinstance(props, list):
            raise DumpFormatError(f"{where}.proposals: expected a list")
        samples, t_seen = [], None
        for j, prop in enumerate(props):
            path = f"{where}.proposals[{j}]"
            if not isinstance(prop, dict):
                raise DumpFormatError(f"{path}: expected an object")
            for key in ("box", "scores", "boxes"):
                if key not in prop:
                    raise DumpFormatError(f"{path}.{key}: missing")
            scores = _matrix(prop["scores"], f"{path}.scores")
            boxes = _matrix(prop["boxes"], f"{path}.boxes", 4)
            if t_seen is None:
                t_seen = scores.shape[0]
            if scores.shape[0] != t_seen:
                raise DumpFormatError(f"{path}.scores: {scores.shape[0]} passes, "
                                      f"image uses T={t_seen}")
            if boxes.shape[0] != t_seen:
                raise DumpFormatError(f"{path}.boxes: {boxes.shape[0]} passes, "
                                      f"image uses T={t_seen}")
            try:
                proposal = Box.from_array(prop["box"])
                samples.append(McDetectionSamples(scores, boxes, proposal))
            except (TypeError, ValueError) as exc:
                raise DumpFormatError(f"{path}: {exc}") from None
        out.append((iid, samples))
    return out


def samples_to_json(image_id, samples):
    return {
        "id": image_id,
        "proposals": [{"box": s.proposal.as_array().tolist() if s.proposal is not None
                       else s.boxes.mean(axis=0).tolist(),
                       "scores": s.scores.tolist(), "boxes": s.boxes.tolist()} for s in samples],
    }


def dump_detector(params, scenes, T, rng):
    """Run MC inference over scenes and build a dump document."""
    return {"schema": SCHEMA,
            "images": [samples_to_json(sc.scene_id or f"img-{i}",
                                       mc_inference(params, sc.image, T, rng))
                       for i, sc in enumerate(scenes)]}


def select_images(parsed, params: SelectionParams = SelectionParams()):
    """Pseudo-label selection for already parsed dump images."""
    images = []
    for iid, samples in parsed:
        chosen = select_pseudo_labels(candidates_for_image(samples), params)
        images.append({"id": iid, "labels": [
            {"box": c.box.as_array().tolist(), "label": c.label,
             "selection_score": float(c.selection_score),
             "detection_score": float(c.detection_score), "u_norm": float(c.u_norm)} for c in chosen]})
    return {"schema": SCHEMA, "params": {"tau1": params.tau1, "tau2": params.tau2,
                                         "sigma": params.sigma, "k_max": params.k_max},
            "images": images}


def select_from_dump(path, params: SelectionParams = SelectionParams()):
    """Load a dump file and return the pseudo-label document."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DumpFormatError(f"<root>: invalid JSON ({exc})") from None
    return select_images(parse_dump(doc), params)
