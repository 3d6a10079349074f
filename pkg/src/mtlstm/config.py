"""Run configuration: defaults, desk-scale preset, key-value file loading, validation.

A config file (or the ``config`` entry of a run manifest) is a flat YAML mapping of ``field: value`` lines, e.g.::

    sampling_ms: 1000
    periods: [1, 5, 25]
    n_teams: 40

Unknown keys and invalid values are collected and reported together.
Precedence is command-line flags > file > preset > defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

import yaml

from .lstm import CONNECTIVITY, GroupSchedule, ScheduleError

SPLIT_MODES = ("window", "team")
REFEED_MODES = ("carry", "literal")
MODEL_NAMES = ("mt-lstm", "lstm", "baseline1")


class ConfigValidationError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    # data
    sampling_ms: int = 100
    input_len: int = 1200
    step: int = 300
    horizon: int = 300
    # predictor
    hidden_size: int = 64
    group_sizes: tuple[int, ...] | None = None
    periods: tuple[int, ...] = (1, 10, 100)
    connectivity: str = "full"
    refeed: str = "carry"
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.001
    clip_norm: float = 5.0
    # mapper
    mapper_hidden: int = 64
    mapper_epochs: int = 20
    mapper_batch_size: int = 32
    mapper_lr: float = 0.001
    # corpus
    n_teams: int = 115
    base_seed: int = 0
    # evaluation
    folds: int = 10
    split: str = "window"
    seed: int = 0
    max_train_windows: int | None = None
    models: tuple[str, ...] = MODEL_NAMES
    out: str = "runs/default"

    def schedule(self) -> GroupSchedule:
        if self.group_sizes is None:
            return GroupSchedule.split(self.hidden_size, self.periods)
        return GroupSchedule(tuple(self.group_sizes), tuple(self.periods))

    def validate(self) -> "RunConfig":
        problems = []
        for name in ("sampling_ms", "input_len", "step", "horizon", "hidden_size", "epochs", "batch_size",
                     "mapper_hidden", "mapper_epochs", "mapper_batch_size", "n_teams"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                problems.append(f"{name}: must be a positive integer (got {v!r})")
        if isinstance(self.sampling_ms, int) and self.sampling_ms >= 1 and self.sampling_ms % 100:
            problems.append(f"sampling_ms: must be a multiple of 100 (got {self.sampling_ms})")
        for name in ("lr", "mapper_lr", "clip_norm"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                problems.append(f"{name}: must be a positive number (got {v!r})")
        if not isinstance(self.folds, int) or self.folds < 2:
            problems.append(f"folds: must be an integer >= 2 (got {self.folds!r})")
        if self.max_train_windows is not None and (not isinstance(self.max_train_windows, int) or self.max_train_windows < 1):
            problems.append(f"max_train_windows: must be a positive integer or null (got {self.max_train_windows!r})")
        if self.connectivity not in CONNECTIVITY:
            problems.append(f"connectivity: must be one of {', '.join(CONNECTIVITY)} (got {self.connectivity!r})")
        if self.refeed not in REFEED_MODES:
            problems.append(f"refeed: must be one of {', '.join(REFEED_MODES)} (got {self.refeed!r})")
        if self.split not in SPLIT_MODES:
            problems.append(f"split: must be one of {', '.join(SPLIT_MODES)} (got {self.split!r})")
        bad = [m for m in self.models if m not in MODEL_NAMES]
        if bad or not self.models:
            problems.append(f"models: choose from {', '.join(MODEL_NAMES)} (got {list(self.models)!r})")
        for name in ("base_seed", "seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                problems.append(f"{name}: must be a non-negative integer (got {v!r})")
        try:
            if isinstance(self.hidden_size, int) and self.hidden_size >= 1:
                sched = self.schedule()
                if sched.hidden_size != self.hidden_size:
                    problems.append("group_sizes: must sum to hidden_size")
        except (ScheduleError, TypeError, ValueError) as exc:
            problems.append(f"periods: {exc}")
        if problems:
            raise ConfigValidationError(problems)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (the ``out`` field excluded)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return from_mapping(changes, base=self)


DESK_SCALE = {
    "sampling_ms": 1000,
    "input_len": 120,
    "step": 30,
    "horizon": 30,
    "periods": [1, 5, 25],
    "n_teams": 40,
    "epochs": 15,
    "mapper_epochs": 10,
    "max_train_windows": 1500,
    "out": "runs/desk",
}

FIELD_HELP = {
    "sampling_ms": "effective sampling period of the traces (multiple of 100 ms)",
    "input_len": "window input length in steps",
    "step": "stride between window starts in steps",
    "horizon": "forecast horizon in steps",
    "hidden_size": "predictor hidden units",
    "group_sizes": "explicit hidden-group sizes (default: near-even split)",
    "periods": "clock period of each hidden group, non-decreasing, first = 1",
    "connectivity": "recurrent connectivity: full | clockwork",
    "refeed": "rollout feedback: carry (keep state) | literal (re-read window)",
    "epochs": "predictor training epochs",
    "batch_size": "predictor minibatch size",
    "lr": "predictor Adam learning rate",
    "clip_norm": "global gradient-norm clip",
    "mapper_hidden": "label-mapper hidden units",
    "mapper_epochs": "label-mapper training epochs",
    "mapper_batch_size": "label-mapper minibatch size",
    "mapper_lr": "label-mapper Adam learning rate",
    "n_teams": "teams in the generated corpus (2 missions x 3 players each)",
    "base_seed": "corpus seed",
    "folds": "cross-validation folds",
    "split": "fold assignment: window | team",
    "seed": "split and model-initialisation seed",
    "max_train_windows": "cap on training windows per fold (null = all)",
    "models": "models to evaluate: mt-lstm, lstm, baseline1",
    "out": "output directory",
}

_TUPLE_FIELDS = {"group_sizes", "periods", "models"}


def from_mapping(values: dict, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    names = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigValidationError([f"{k}: unknown field" for k in unknown])
    clean = {}
    for k, v in values.items():
        if k in _TUPLE_FIELDS and v is not None:
            v = tuple(v) if isinstance(v, (list, tuple)) else (v,)
        clean[k] = v
    return dataclasses.replace(base, **clean).validate()


def desk_scale(base: RunConfig | None = None) -> RunConfig:
    return from_mapping(DESK_SCALE, base)


def load_config(path, desk: bool = False) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigValidationError([f"{path}: not a key-value document ({exc})"]) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigValidationError([f"{path}: expected a key-value mapping at top level"])
    if "manifest_version" in data:
        # a run manifest carries the complete resolved config
        return from_mapping(data.get("config", {}), RunConfig())
    return from_mapping(data, desk_scale() if desk else RunConfig())


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
