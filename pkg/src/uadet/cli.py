"""Command line interface: ``uadet {run,sweep-k,select,gen-data,eval}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .config import ConfigError, load_config
from .detector import load_checkpoint
from .dump import DumpFormatError, select_from_dump
from .experiment import SWEEP_HEADER, evaluate_params, k_sweep, run_experiment
from .selection import SelectionParams
from .synth import ShiftParams, make_dataset, make_source_eval, read_split, write_split
from .training import MODES


def _experiment_config(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seeds:
        changes["seeds"] = tuple(args.seeds)
    if getattr(args, "modes", None):
        changes["modes"] = tuple(args.modes)
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    train = {k: getattr(args, k) for k in ("pretrain_epochs", "warmup_epochs", "adapt_epochs",
                                          "mc_passes") if getattr(args, k) is not None}
    if train:
        changes["training"] = dataclasses.replace(cfg.training, **train)
    data = {k: getattr(args, k) for k in ("n_source", "n_target", "n_eval")
            if getattr(args, k) is not None}
    if data:
        changes["dataset"] = dataclasses.replace(cfg.dataset, **data)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _add_experiment_args(sp):
    sp.add_argument("--config", help="YAML experiment config (defaults when omitted)")
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--output-dir")
    sp.add_argument("--pretrain-epochs", type=int)
    sp.add_argument("--warmup-epochs", type=int)
    sp.add_argument("--adapt-epochs", type=int)
    sp.add_argument("--mc-passes", type=int, help="stochastic passes T")
    sp.add_argument("--n-source", type=int)
    sp.add_argument("--n-target", type=int)
    sp.add_argument("--n-eval", type=int)


def cmd_run(args):
    cfg = _experiment_config(args)
    runs = run_experiment(cfg)
    for r in runs:
        m = f"{r.result.map:.4f}" if r.result is not None else "nan"
        print(f"{r.mode:12s} seed={r.seed} mAP={m} {r.status}")
    print(f"wrote {os.path.join(cfg.output_dir, 'results.csv')}")
    return 0


def cmd_sweep(args):
    cfg = _experiment_config(args)
    rows = k_sweep(cfg, args.ks)
    print(",".join(SWEEP_HEADER))
    for r in rows:
        print(f"{r['K']},{r['mean_mAP']:.6f},{r['sd']:.6f},{r['n_seeds']}")
    return 0


def cmd_select(args):
    params = SelectionParams(args.tau1, args.tau2, args.sigma, args.k)
    doc = select_from_dump(args.dump, params)
    text = json.dumps(doc, indent=1)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_gen_data(args):
    os.makedirs(args.out, exist_ok=True)
    shift = ShiftParams(args.haze, args.contrast, args.noise_sd)
    ds = make_dataset(args.seed, args.n_source, args.n_target, shift, args.n_classes, args.n_eval)
    write_split(os.path.join(args.out, "source.json"), ds.source, "source")
    write_split(os.path.join(args.out, "target.json"), ds.target, "target")
    write_split(os.path.join(args.out, "target_eval.json"), ds.target_eval, "target_eval")
    write_split(os.path.join(args.out, "source_eval.json"),
                make_source_eval(args.seed, args.n_eval, args.n_classes), "source_eval")
    print(f"wrote 4 splits to {args.out}")
    return 0


def cmd_eval(args):
    params = load_checkpoint(args.checkpoint)
    scenes, _ = read_split(args.split)
    res = evaluate_params(params, scenes, params.arch.n_classes)
    print(json.dumps(res.as_dict(), indent=1))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="uadet", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("run", help="train and evaluate the configured modes")
    _add_experiment_args(sp)
    sp.add_argument("--modes", nargs="+", choices=MODES)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep-k", help="UFA+UST over several K values")
    _add_experiment_args(sp)
    sp.add_argument("--ks", type=int, nargs="+", default=[5, 10, 20, 30, 50])
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("select", help="pseudo-label selection on a detection dump")
    sp.add_argument("dump")
    sp.add_argument("--out")
    sp.add_argument("--tau1", type=float, default=0.3)
    sp.add_argument("--tau2", type=float, default=0.001)
    sp.add_argument("--sigma", type=float, default=0.4)
    sp.add_argument("-k", type=int, default=20)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("gen-data", help="export synthetic splits as JSON")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-source", type=int, default=200)
    sp.add_argument("--n-target", type=int, default=200)
    sp.add_argument("--n-eval", type=int, default=100)
    sp.add_argument("--n-classes", type=int, default=3)
    sp.add_argument("--haze", type=float, default=ShiftParams.haze)
    sp.add_argument("--contrast", type=float, default=ShiftParams.contrast)
    sp.add_argument("--noise-sd", type=float, default=ShiftParams.noise_sd)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("eval", help="mAP@0.5 of a checkpoint on an exported split")
    sp.add_argument("checkpoint")
    sp.add_argument("split")
    sp.set_defaults(func=cmd_eval)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DumpFormatError, ValueError, OSError) as exc:
        print(f"uadet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
