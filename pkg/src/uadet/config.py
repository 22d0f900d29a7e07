"""Experiment configuration: YAML in, validated frozen dataclasses out.

File layout (every section and key optional; unknown keys are errors)::

    seeds: [0, 1, 2, 3, 4]
    modes: [source-only, FA+ST, UFA+ST, FA+UST, UFA+UST, oracle]
    output_dir: runs/default
    dataset:
      n_source: 200
      n_target: 200
      n_eval: 100
      n_classes: 3
      shift: {haze: 0.35, contrast: 0.6, noise_sd: 0.05}
    training:        # TrainingConfig fields except seed and mode
      lr: 0.01
      mc_passes: 16
      ...
    selection: {tau1: 0.3, tau2: 0.001, sigma: 0.4, k_max: 20}
    architecture:    # Architecture fields except image_size and n_classes
      hidden: 64
      dropout: 0.3

``UADET_SEED`` (a single integer) and ``UADET_OUTPUT_DIR`` override the
seed list and output directory.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import asdict, dataclass, fields

import yaml

from .detector import Architecture
from .selection import SelectionParams
from .synth import IMAGE_SIZE, ShiftParams
from .training import MODES, TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n_source: int = 200
    n_target: int = 200
    n_eval: int = 100
    n_classes: int = 3
    shift: ShiftParams = ShiftParams()

    def __post_init__(self):
        if min(self.n_source, self.n_target, self.n_eval) < 1:
            raise ConfigError("dataset counts must be >= 1")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1")


_TRAINING_EXCLUDED = ("seed", "mode")
_ARCH_EXCLUDED = ("image_size", "n_classes")


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    modes: tuple = MODES
    output_dir: str = "runs/default"
    dataset: DatasetConfig = DatasetConfig()
    training: TrainingConfig = TrainingConfig()
    selection: SelectionParams = SelectionParams()
    architecture: Architecture = Architecture()

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds")
        if not self.modes:
            raise ConfigError("at least one mode is required")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; expected one of {list(MODES)}")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError("duplicate modes")
        if self.architecture.n_classes != self.dataset.n_classes:
            raise ConfigError("architecture and dataset disagree on the class count")

    @property
    def mc_passes(self):
        return self.training.mc_passes

    def as_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["modes"] = list(self.modes)
        for k in _TRAINING_EXCLUDED:
            d["training"].pop(k)
        for k in _ARCH_EXCLUDED:
            d["architecture"].pop(k)
        return d

    def to_yaml(self):
        return yaml.safe_dump(self.as_dict(), sort_keys=False)


def _build(cls, data, where, excluded=()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)} - set(excluded)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data):
    data = dict(data or {})
    unknown = sorted(set(data) - {f.name for f in fields(ExperimentConfig)})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    ds = dict(data.get("dataset") or {})
    shift = _build(ShiftParams, ds.pop("shift", None), "dataset.shift")
    dataset = _build(DatasetConfig, {**ds, "shift": shift}, "dataset")
    arch = _build(Architecture, data.get("architecture"), "architecture", _ARCH_EXCLUDED)
    arch = dataclasses.replace(arch, image_size=IMAGE_SIZE, n_classes=dataset.n_classes)
    kwargs = {
        "dataset": dataset,
        "training": _build(TrainingConfig, data.get("training"), "training", _TRAINING_EXCLUDED),
        "selection": _build(SelectionParams, data.get("selection"), "selection"),
        "architecture": arch,
    }
    for key in ("seeds", "modes"):
        if key in data:
            if not isinstance(data[key], (list, tuple)):
                raise ConfigError(f"{key}: expected a list")
            kwargs[key] = tuple(data[key])
    if "seeds" in kwargs and not all(isinstance(s, int) for s in kwargs["seeds"]):
        raise ConfigError("seeds must be integers")
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def apply_env(cfg: ExperimentConfig, environ=None):
    """Apply the ``UADET_SEED`` / ``UADET_OUTPUT_DIR`` overrides."""
    environ = os.environ if environ is None else environ
    changes = {}
    if environ.get("UADET_SEED"):
        try:
            changes["seeds"] = (int(environ["UADET_SEED"]),)
        except ValueError as exc:
            raise ConfigError(f"UADET_SEED must be an integer: {environ['UADET_SEED']!r}") from exc
    if environ.get("UADET_OUTPUT_DIR"):
        changes["output_dir"] = environ["UADET_OUTPUT_DIR"]
    return dataclasses.replace(cfg, **changes) if changes else cfg


def load_config(path=None, environ=None):
    """Read a YAML config (``None`` gives the defaults) and apply env overrides."""
    data = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return apply_env(config_from_dict(data), environ)
