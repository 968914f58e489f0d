"""Run configuration: one YAML document with a fixed schema.

Example::

    schema_version: 1
    paths:
      data_dir: data        # recording directories (relative to this file)
      cache_dir: cache
      run_dir: runs/base
    enrichment: {strategy: MAW, alpha: 1.0, feature_source: AVG_PSD, k: 1}
    model: {L: 5, p: 6, h: 3, t: 3, ff_dim: 28, n_layers_intra: 1, n_layers_inter: 1, classes: 3}
    train: {lr: 0.001, batch_size: 16, max_passes: 20, patience: 5, seed: 0}
    folds: {n_validation: 1, n_test: 1, n_folds: 1, seed: 0}

``folds`` is either such an automatic rotation or an explicit list of
``{train: [...], validation: [...], test: [...]}`` mappings. The model token
length ``d_in`` is derived from the data and must not be given. Unknown keys
anywhere are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .enrichment import EnrichmentConfig
from .errors import ConfigError
from .harness.data import FoldSpec, make_folds
from .harness.training import TrainConfig
from .model import ModelConfig
from .tokens import triangular_dim

SCHEMA_VERSION = 1
PATH_KEYS = ("data_dir", "cache_dir", "run_dir")
AUTO_FOLD_KEYS = ("n_validation", "n_test", "n_folds", "seed")
_MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig) if f.name != "d_in")


def _check_keys(section: str, given, allowed):
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")


def _build(section, cls, values, allowed):
    _check_keys(section, values, allowed)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


@dataclass
class RunConfig:
    paths: dict
    enrichment: EnrichmentConfig = field(default_factory=EnrichmentConfig)
    model: dict = field(default_factory=dict)  # ModelConfig fields except d_in
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: object = field(default_factory=lambda: {"n_validation": 1, "n_test": 1, "n_folds": None, "seed": 0})
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        _check_keys("model", self.model, _MODEL_KEYS)
        # materialize model defaults and validate against a nominal token length
        defaults = {k: v for k, v in ModelConfig().to_dict().items() if k != "d_in"}
        self.model = {**defaults, **self.model}
        if self.model.get("hidden") is not None:
            self.model["hidden"] = list(self.model["hidden"])
        self.model_config(triangular_dim(3))
        self.train.validate_for(self.model_config(triangular_dim(3)))

    def model_config(self, token_dim: int) -> ModelConfig:
        return ModelConfig.from_dict({**self.model, "d_in": token_dim})

    def path(self, key: str) -> Path:
        return Path(self.paths[key])

    def fold_specs(self, ids) -> list[FoldSpec]:
        if isinstance(self.folds, dict):
            return make_folds(ids, **self.folds)
        known = set(ids)
        specs = [FoldSpec(**f) for f in self.folds]
        for s in specs:
            missing = sorted((set(s.train) | set(s.validation) | set(s.test)) - known)
            if missing:
                raise ConfigError(f"fold refers to unknown recordings {missing}")
        return specs

    def to_dict(self) -> dict:
        folds = dict(self.folds) if isinstance(self.folds, dict) else [dict(f) for f in self.folds]
        return {
            "schema_version": self.schema_version,
            "paths": {k: str(v) for k, v in self.paths.items()},
            "enrichment": dataclasses.asdict(self.enrichment),
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "folds": folds,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, enrichment=None, model=None, train=None, paths=None) -> "RunConfig":
        """Copy with some fields of the given sections overridden."""
        return RunConfig(
            paths={**self.paths, **(paths or {})},
            enrichment=dataclasses.replace(self.enrichment, **(enrichment or {})),
            model={**self.model, **(model or {})},
            train=dataclasses.replace(self.train, **(train or {})),
            folds=self.folds,
            schema_version=self.schema_version,
        )


def config_from_dict(d: dict, base_dir=None) -> RunConfig:
    _check_keys("<root>", d, ("schema_version", "paths", "enrichment", "model", "train", "folds"))
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    if "paths" not in d:
        raise ConfigError("missing section 'paths'")
    paths = d["paths"]
    _check_keys("paths", paths, PATH_KEYS)
    missing = [k for k in PATH_KEYS if k not in paths]
    if missing:
        raise ConfigError(f"missing paths {missing}")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    paths = {k: str((base / str(v)).resolve()) for k, v in paths.items()}

    enrichment = _build("enrichment", EnrichmentConfig, d.get("enrichment") or {},
                        [f.name for f in dataclasses.fields(EnrichmentConfig)])
    train = _build("train", TrainConfig, d.get("train") or {},
                   [f.name for f in dataclasses.fields(TrainConfig)])
    model = d.get("model") or {}
    folds = d.get("folds")
    if folds is None:
        folds = {}
    if isinstance(folds, dict):
        _check_keys("folds", folds, AUTO_FOLD_KEYS)
        folds = {"n_validation": 1, "n_test": 1, "n_folds": None, "seed": 0, **folds}
    elif isinstance(folds, list):
        for f in folds:
            _check_keys("folds[]", f, ("train", "validation", "test"))
            FoldSpec(f.get("train", []), f.get("validation", []), f.get("test", []))
        folds = [{"train": list(f.get("train", [])), "validation": list(f.get("validation", [])),
                  "test": list(f.get("test", []))} for f in folds]
    else:
        raise ConfigError("folds must be a mapping or a list")
    try:
        return RunConfig(paths, enrichment, model, train, folds, version)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return config_from_dict(data, path.parent)
