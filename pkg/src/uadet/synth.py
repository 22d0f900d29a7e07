"""Synthetic labeled scenes with a photometric source -> target shift.

Objects are axis-aligned rectangles whose fill pattern encodes the class.
The target domain applies haze, contrast loss and sensor noise after
rendering, so annotation geometry is shared by both domains.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou

IMAGE_SIZE = 32
SOURCE, TARGET = "source", "target"
_DOMAIN_STREAM = {SOURCE: 0, TARGET: 1}


@dataclass(frozen=True)
class ShiftParams:
    haze: float = 0.35
    contrast: float = 0.6
    noise_sd: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.haze <= 1.0:
            raise ValueError("haze must lie in [0, 1]")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError("contrast must lie in (0, 1]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")

    @classmethod
    def identity(cls):
        return cls(0.0, 1.0, 0.0)


class HeldOutAnnotations:
    """Target labels that only evaluation (or an oracle run) may read.

    Every :meth:`reveal` is counted in the owning audit counter under its
    ``purpose``, so a harness can prove a training path never touched them.
    """

    __slots__ = ("_annotations", "_audit")

    def __init__(self, annotations, audit):
        self._annotations = tuple(annotations)
        self._audit = audit

    def reveal(self, purpose):
        self._audit[purpose] += 1
        return self._annotations

    def __repr__(self):
        return f"HeldOutAnnotations(<{len(self._annotations)} hidden>)"


@dataclass(frozen=True)
class Scene:
    image: np.ndarray
    annotations: object  # tuple of (label, Box), or HeldOutAnnotations for target
    domain: str
    scene_id: str = ""

    @property
    def held_out(self):
        return isinstance(self.annotations, HeldOutAnnotations)

    def labels(self, purpose="train"):
        if self.held_out:
            return self.annotations.reveal(purpose)
        return self.annotations


@dataclass
class Dataset:
    source: list
    target: list
    target_eval: list = field(default_factory=list)
    audit: Counter = field(default_factory=Counter)


def apply_shift(image, shift: ShiftParams, rng):
    """Photometric shift; output stays in [0, 1]."""
    out = image
    # identity settings are skipped so a null shift is pixel-exact
    if shift.contrast != 1.0:
        out = 0.5 + shift.contrast * (out - 0.5)
    if shift.noise_sd > 0:
        out = out + rng.normal(0.0, shift.noise_sd, size=image.shape)
    out = np.clip(out, 0.0, 1.0)
    if shift.haze > 0:
        out = shift.haze + (1.0 - shift.haze) * out
    return out


def _pattern(label, h, w, rng):
    hi = rng.uniform(0.78, 0.95)
    lo = rng.uniform(0.05, 0.2)
    yy, xx = np.mgrid[0:h, 0:w]
    kind = (label - 1) % 5
    if kind == 0:  # solid bright
        return np.full((h, w), hi)
    if kind == 1:  # horizontal stripes
        return np.where((yy // 2) % 2 == 0, hi, lo)
    if kind == 2:  # checkerboard
        return np.where(((yy // 2) + (xx // 2)) % 2 == 0, hi, lo)
    if kind == 3:  # vertical stripes
        return np.where((xx // 2) % 2 == 0, hi, lo)
    return np.full((h, w), lo)  # solid dark


def _background(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    base = rng.uniform(0.25, 0.45)
    angle = rng.uniform(0, 2 * np.pi)
    slope = rng.uniform(-0.1, 0.1)
    img = base + slope * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5))
    for _ in range(2):
        fx, fy = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img = img + 0.03 * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    return img


def render_scene(rng, n_classes, size=IMAGE_SIZE):
    """Render a clean scene; returns ``(image, annotations)``."""
    img = _background(rng, size)
    annotations = []
    n_objects = int(rng.integers(1, 5))
    for _ in range(n_objects):
        for _attempt in range(50):
            h, w = (int(v) for v in rng.integers(6, 12, size=2))
            y0 = int(rng.integers(0, size - h + 1))
            x0 = int(rng.integers(0, size - w + 1))
            box = Box((x0 + w / 2) / size, (y0 + h / 2) / size, w / size, h / size)
            if all(iou(box, other) <= 0.1 for _, other in annotations):
                break
        else:
            continue
        label = int(rng.integers(1, n_classes + 1))
        img[y0:y0 + h, x0:x0 + w] = _pattern(label, h, w, rng)
        annotations.append((label, box))
    return np.clip(img, 0.0, 1.0), tuple(annotations)


def generate_scene(rng, n_classes=3, domain=SOURCE, shift=ShiftParams(), size=IMAGE_SIZE,
                   scene_id=""):
    """One scene.  Target scenes get ``shift`` applied after rendering."""
    if n_classes < 1:
        raise ValueError("need at least one class")
    if domain not in _DOMAIN_STREAM:
        raise ValueError(f"unknown domain {domain!r}")
    image, annotations = render_scene(rng, n_classes, size)
    if domain == TARGET:
        image = apply_shift(image, shift, rng)
    return Scene(image=image, annotations=annotations, domain=domain, scene_id=scene_id)


def scene_rng(seed, stream, index):
    """Independent generator for scene ``index`` of a stream (splittable seeding)."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def make_dataset(seed, n_source, n_target, shift=ShiftParams(), n_classes=3, n_eval=0,
                 size=IMAGE_SIZE):
    """Source scenes with labels, target scenes with held-out labels.

    ``n_eval`` extra target scenes form a disjoint evaluation split.
    """
    if n_source < 1 or n_target < 1:
        raise ValueError("dataset counts must be >= 1")
    audit = Counter()
    source = [generate_scene(scene_rng(seed, 0, i), n_classes, SOURCE, shift, size, f"s{i}")
              for i in range(n_source)]

    def held(stream, count, prefix):
        out = []
        for i in range(count):
            sc = generate_scene(scene_rng(seed, stream, i), n_classes, TARGET, shift, size,
                                f"{prefix}{i}")
            out.append(Scene(sc.image, HeldOutAnnotations(sc.annotations, audit), TARGET,
                             sc.scene_id))
        return out

    return Dataset(source=source, target=held(1, n_target, "t"),
                   target_eval=held(2, n_eval, "e"), audit=audit)


def make_source_eval(seed, n, n_classes=3, size=IMAGE_SIZE):
    """Clean source-domain evaluation scenes, disjoint from the training draws."""
    return [generate_scene(scene_rng(seed, 3, i), n_classes, SOURCE, ShiftParams.identity(),
                           size, f"v{i}") for i in range(n)]


def scenes_to_json(scenes, split):
    """Serialize scenes to the dataset export schema (version 1)."""
    records = []
    for sc in scenes:
        anns = sc.annotations.reveal("export") if sc.held_out else sc.annotations
        records.append({
            "id": sc.scene_id,
            "domain": sc.domain,
            "pixels": sc.image.tolist(),
            "annotations": [{"label": int(lbl), "box": [b.cx, b.cy, b.w, b.h]} for lbl, b in anns],
            "evaluation_only": sc.held_out,
        })
    size = scenes[0].image.shape[0] if scenes else IMAGE_SIZE
    return {"schema": 1, "split": split, "image_size": size, "scenes": records}


def write_split(path, scenes, split):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(scenes_to_json(scenes, split), fh)


def read_split(path):
    """Load an exported split; evaluation-only labels come back held out."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != 1:
        raise ValueError(f"{path}: unsupported dataset schema {doc.get('schema')!r}")
    audit = Counter()
    scenes = []
    for rec in doc["scenes"]:
        anns = tuple((int(a["label"]), Box(*a["box"])) for a in rec["annotations"])
        if rec.get("evaluation_only"):
            anns = HeldOutAnnotations(anns, audit)
        scenes.append(Scene(np.asarray(rec["pixels"], dtype=np.float64), anns, rec["domain"],
                            rec["id"]))
    return scenes, audit
