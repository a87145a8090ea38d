"""Run configuration: defaults, JSON config files, and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ValidationError

SUBCOMMANDS = ("kernel", "transform", "retrieve", "eval-retrieval", "fit", "predict",
               "explain", "medoids", "topics", "fuse", "cluster", "export", "stats")
FIT_TASKS = ("svr", "svc", "surv")


@dataclass
class RunConfig:
    command: str = ""
    task: str | None = None
    manifest: str | None = None
    dist: str | None = None
    kernel: list = field(default_factory=list)
    model: str | None = None
    topics: str | None = None
    input: str | None = None
    sensitivity: str | None = None
    out: str = "out"
    label: str | None = None
    site: str | None = None
    time_col: str = "time"
    event_col: str = "event"
    bag: list = field(default_factory=list)
    sigma: float = 10.0
    topic_sigma: float = 10.0
    gamma: str | float = "median"
    alpha: float = 0.0625
    C: float = 1.0
    epsilon: float = 0.1
    k: int = 5
    medoids: int = 25
    folds: int | None = None
    val_frac: float = 0.1
    mode: str | None = None
    rescale: bool = True
    n_clusters: int = 2
    which: str | None = None
    censor_years: float = 10.0
    auc_moderate: float = 0.6
    auc_strong: float = 0.7
    block: int = 1024
    seed: int = 0
    threads: int = 1
    # keys given by a flag or the config file rather than defaulted
    explicit: frozenset = field(default_factory=frozenset, compare=False)

    def validate(self) -> "RunConfig":
        if self.command not in SUBCOMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.command == "fit" and self.task not in FIT_TASKS:
            raise ValidationError(f"fit needs --task in {FIT_TASKS}")
        if not self.sigma > 0 or not self.topic_sigma > 0:
            raise ValidationError("sigma must be positive")
        if self.gamma != "median":
            try:
                g = float(self.gamma)
            except (TypeError, ValueError):
                raise ValidationError(f"--gamma must be 'median' or a number, got {self.gamma!r}") from None
            if g < 0:
                raise ValidationError("gamma must be nonnegative")
            self.gamma = g
        if self.alpha <= 0 or self.C <= 0 or self.epsilon < 0:
            raise ValidationError("need alpha > 0, C > 0, epsilon >= 0")
        if self.k < 1 or self.medoids < 1 or self.block < 1:
            raise ValidationError("k, medoids and block must be positive")
        if self.folds is not None and self.folds < 2:
            raise ValidationError("folds must be at least 2")
        if not 0 <= self.val_frac < 1:
            raise ValidationError("val_frac must be in [0, 1)")
        if self.mode is not None and self.mode not in ("sum", "product"):
            raise ValidationError("mode must be sum or product")
        if self.seed < 0:
            raise ValidationError("seed must be a nonnegative integer")
        if self.threads < 1:
            raise ValidationError("threads must be positive")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["explicit"] = sorted(self.explicit)
        return out


FIELD_NAMES = {f.name for f in fields(RunConfig)} - {"explicit"}


def load_config_file(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(data) - FIELD_NAMES)
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {unknown}")
    return data


def build_config(cli: dict, file_values: dict | None = None) -> RunConfig:
    """CLI values (non-None) override the config file, which overrides defaults."""
    merged = dict(file_values or {})
    for key, value in cli.items():
        if value is not None and value != []:
            merged[key] = value
    unknown = sorted(set(merged) - FIELD_NAMES)
    if unknown:
        raise ValidationError(f"unknown config keys {unknown}")
    return RunConfig(**merged, explicit=frozenset(merged)).validate()
