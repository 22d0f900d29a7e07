"""Experiment orchestration: three-phase schedule per mode, K sweep, result files.

Schedule for one seed:

* pretrain: source detection only (``pretrain_epochs``);
* warm-up: image + instance alignment on proposals (``warmup_epochs``),
  shared by every adapted mode;
* adaptation: the mode's objective (``adapt_epochs``) at
  ``lr * adapt_lr_scale``.

``source-only`` replaces the last two phases by the same number of source
detection epochs, and ``oracle`` runs the whole budget on the labeled target
split.  Phases shared between modes are trained once and forked.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .detector import DetectorParams, NumericError, detect, save_checkpoint
from .evaluation import EvalResult, evaluate
from .geometry import Box
from .synth import make_dataset
from .training import (ADAPTED_MODES, StepSpec, make_optimizer, run_phase)

log = logging.getLogger(__name__)

PRETRAIN, WARMUP, ADAPT = 0, 1, 2
_ORACLE_STREAM = 10
FLOAT_FMT = "{:.6f}"


def csv_header(n_classes):
    """Results CSV columns; ``ap_class_i`` is foreground class ``i + 1``."""
    return ["mode", "seed", "K", "mAP"] + [f"ap_class_{i}" for i in range(n_classes)] + ["status"]


SWEEP_HEADER = ["K", "mean_mAP", "sd", "n_seeds"]


@dataclass
class RunResult:
    mode: str
    seed: int
    k: int
    result: EvalResult = None
    status: str = "ok"
    history: list = field(default_factory=list)
    params: DetectorParams = field(default=None, repr=False)
    cpu_seconds: float = 0.0  # includes any shared phase this run triggered first

    @property
    def ok(self):
        return self.status == "ok"

    def csv_row(self, n_classes):
        if self.result is None:
            aps = ["nan"] * n_classes
            m = "nan"
        else:
            aps = [FLOAT_FMT.format(self.result.per_class_ap[c]) if c in self.result.per_class_ap
                   else "nan" for c in range(1, n_classes + 1)]
            m = FLOAT_FMT.format(self.result.map)
        return [self.mode, str(self.seed), str(self.k), m] + aps + [self.status]


def mode_slug(mode):
    return mode.lower().replace("+", "-")


def evaluate_params(p: DetectorParams, scenes, n_classes):
    """mAP@0.5 of the deterministic detector on labeled (or held-out) scenes."""
    dets = [[(lbl, s, Box.from_array(b)) for lbl, s, b in detect(p, sc.image)] for sc in scenes]
    gts = [sc.labels("eval") for sc in scenes]
    return evaluate(dets, gts, range(1, n_classes + 1))


def _tag(history, phase):
    return [{"phase": phase, "epoch": i, **h} for i, h in enumerate(history)]


class SeedRun:
    """Data and shared training phases for one seed; modes fork from it."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        d = cfg.dataset
        self.data = make_dataset(seed, d.n_source, d.n_target, d.shift, d.n_classes, d.n_eval)
        self.source = [(sc.image, sc.labels("train")) for sc in self.data.source]
        self.target_images = [sc.image for sc in self.data.target]
        self.tcfg = dataclasses.replace(cfg.training, seed=seed)
        self._pre = None
        self._warm = None

    def _init(self):
        return DetectorParams.init(self.cfg.architecture,
                                   np.random.default_rng(np.random.SeedSequence([self.seed, 0])))

    def _phase(self, p, opt, items, target, epochs, spec, stream, sel=None):
        return run_phase(p, opt, items, target, epochs, spec, self.tcfg,
                         sel or self.cfg.selection, stream, self.seed)

    def pretrained(self):
        if self._pre is None:
            p = self._init()
            opt = make_optimizer(p, self.tcfg)
            hist = self._phase(p, opt, self.source, [], self.tcfg.pretrain_epochs, StepSpec(),
                               PRETRAIN)
            self._pre = (p, opt, _tag(hist, "pretrain"))
        return self._pre

    def warmed(self):
        if self._warm is None:
            p0, opt0, hist0 = self.pretrained()
            p = p0.copy()
            opt = opt0.fork(p)
            hist = self._phase(p, opt, self.source, self.target_images, self.tcfg.warmup_epochs,
                               StepSpec(fa="fa"), WARMUP)
            self._warm = (p, opt, hist0 + _tag(hist, "warmup"))
        return self._warm

    def _audited(self, fn):
        before = Counter(self.data.audit)
        out = fn()
        if self.data.audit != before:
            raise RuntimeError(f"target labels were read during training: "
                               f"{dict(self.data.audit - before)}")
        return out

    def train(self, mode, selection=None):
        """Train one mode; returns ``(params, history)``."""
        t = self.tcfg
        adapt_lr = t.lr * t.adapt_lr_scale
        if mode == "oracle":
            items = [(sc.image, sc.labels("oracle")) for sc in self.data.target]
            p = self._init()
            opt = make_optimizer(p, t)
            h1 = self._phase(p, opt, items, [], t.pretrain_epochs + t.warmup_epochs, StepSpec(),
                             _ORACLE_STREAM)
            opt.lr = adapt_lr
            h2 = self._phase(p, opt, items, [], t.adapt_epochs, StepSpec(), _ORACLE_STREAM + ADAPT)
            return p, _tag(h1, "oracle") + _tag(h2, "oracle-adapt")

        def run():
            if mode == "source-only":
                p0, opt0, hist = self.pretrained()
                p = p0.copy()
                opt = opt0.fork(p)
                h1 = self._phase(p, opt, self.source, [], t.warmup_epochs, StepSpec(), WARMUP)
                opt.lr = adapt_lr
                h2 = self._phase(p, opt, self.source, [], t.adapt_epochs, StepSpec(), ADAPT)
                return p, hist + _tag(h1, "source") + _tag(h2, "adapt")
            if mode not in ADAPTED_MODES:
                raise ValueError(f"unknown mode {mode!r}")
            p0, opt0, hist = self.warmed()
            p = p0.copy()
            opt = opt0.fork(p, lr=adapt_lr)
            h = self._phase(p, opt, self.source, self.target_images, t.adapt_epochs,
                            StepSpec.for_mode(mode), ADAPT, selection)
            return p, hist + _tag(h, "adapt")

        return self._audited(run)

    def run_mode(self, mode, selection=None):
        sel = selection or self.cfg.selection
        out = RunResult(mode=mode, seed=self.seed, k=sel.k_max)
        t0 = time.process_time()
        try:
            p, out.history = self.train(mode, selection)
        except NumericError as exc:
            log.warning("%s seed %d diverged: %s", mode, self.seed, exc)
            out.status = "diverged"
            out.cpu_seconds = time.process_time() - t0
            return out
        out.params = p
        out.result = evaluate_params(p, self.data.target_eval, self.cfg.dataset.n_classes)
        out.cpu_seconds = time.process_time() - t0
        log.info("%s seed %d K=%d: target mAP %.4f", mode, self.seed, sel.k_max, out.result.map)
        return out


def render_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def report_doc(cfg: ExperimentConfig, run: RunResult, audit):
    return {
        "mode": run.mode, "seed": run.seed, "K": run.k, "status": run.status,
        "config": cfg.as_dict(),
        "history": run.history,
        "eval": run.result.as_dict() if run.result is not None else None,
        "label_audit": dict(sorted(audit.items())),
    }


def _emit(cfg, runs, audits, csv_name, suffix=""):
    out = cfg.output_dir
    os.makedirs(os.path.join(out, "reports"), exist_ok=True)
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    n = cfg.dataset.n_classes
    _write_text(os.path.join(out, csv_name),
                render_csv(csv_header(n), [r.csv_row(n) for r in runs]))
    for r in runs:
        stem = f"{mode_slug(r.mode)}_seed{r.seed}{suffix.format(k=r.k)}"
        with open(os.path.join(out, "reports", stem + ".json"), "w", encoding="utf-8",
                  newline="\n") as fh:
            json.dump(report_doc(cfg, r, audits[r.seed]), fh, indent=1, sort_keys=True)
            fh.write("\n")
        if r.params is not None:
            save_checkpoint(os.path.join(out, "checkpoints", stem + ".ckpt"), r.params)


def run_experiment(cfg: ExperimentConfig, write=True):
    """Train and evaluate every configured mode for every seed.

    Returns the list of :class:`RunResult` in (seed, mode) order.  With
    ``write`` the results CSV, one JSON report per run and the final
    checkpoints go under ``cfg.output_dir``.
    """
    runs, audits = [], {}
    for seed in cfg.seeds:
        sr = SeedRun(cfg, seed)
        for mode in cfg.modes:
            runs.append(sr.run_mode(mode))
        audits[seed] = sr.data.audit
    if write:
        _emit(cfg, runs, audits, "results.csv")
    return runs


def _check_ks(ks):
    ks = list(ks)
    if not ks:
        raise ValueError("need at least one K value")
    for k in ks:
        if isinstance(k, bool) or int(k) != k or k < 1:
            raise ValueError(f"K values must be positive integers, got {k!r}")
    dup = sorted(k for k, c in Counter(ks).items() if c > 1)
    if dup:
        raise ValueError(f"duplicate K values: {dup}")
    return [int(k) for k in ks]


def summarize_sweep(runs, ks):
    rows = []
    for k in ks:
        vals = [r.result.map for r in runs if r.k == k and r.ok]
        mean = float(np.mean(vals)) if vals else float("nan")
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        rows.append({"K": k, "mean_mAP": mean, "sd": sd, "n_seeds": len(vals)})
    return rows


def k_sweep(cfg: ExperimentConfig, ks, write=True):
    """UFA+UST for each K in ``ks`` over all seeds; returns one summary row per K."""
    ks = _check_ks(ks)
    runs, audits = [], {}
    for seed in cfg.seeds:
        sr = SeedRun(cfg, seed)
        for k in ks:
            runs.append(sr.run_mode("UFA+UST", dataclasses.replace(cfg.selection, k_max=k)))
        audits[seed] = sr.data.audit
    rows = summarize_sweep(runs, ks)
    if write:
        _emit(cfg, runs, audits, "k_sweep_runs.csv", suffix="_K{k}")
        _write_text(os.path.join(cfg.output_dir, "k_sweep.csv"), render_csv(
            SWEEP_HEADER, [[r["K"], FLOAT_FMT.format(r["mean_mAP"]), FLOAT_FMT.format(r["sd"]),
                            r["n_seeds"]] for r in rows]))
    return rows
