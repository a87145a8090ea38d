"""Trained dual models, their JSON form, and the shared scoring path."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DimensionMismatchError, FormatError, MetaMismatchError, ValidationError

TASKS = ("svr", "svc", "survival")
META_KEYS = ("sigma", "gamma", "estimator")


@dataclass(frozen=True, eq=False)
class DualModel:
    """A kernel machine in dual form.

    Scores are ``f(q) = sum_i coefficients[i] * K(train_i, q) + bias``;
    survival models carry no bias.
    """

    task: str
    train_ids: tuple
    coefficients: np.ndarray
    bias: float | None = None
    hyperparams: dict = field(default_factory=dict)
    kernel_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        coef = np.array(self.coefficients, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        if coef.shape[0] != len(self.train_ids):
            raise ValidationError(
                f"{coef.shape[0]} coefficients for {len(self.train_ids)} training ids")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        if self.task == "survival" and self.bias is not None:
            raise ValidationError("survival models have no bias")

    def with_meta(self, **meta) -> "DualModel":
        merged = {**self.kernel_meta, **meta}
        return DualModel(self.task, self.train_ids, self.coefficients, self.bias,
                         dict(self.hyperparams), merged)


def predict(model: DualModel, K_cross) -> np.ndarray:
    """Scores for each query column of ``K_cross`` (rows = training items)."""
    Kc = np.asarray(K_cross, dtype=np.float64)
    if Kc.ndim == 1:
        Kc = Kc[:, None]
    if Kc.ndim != 2 or Kc.shape[0] != len(model.train_ids):
        raise DimensionMismatchError(
            f"cross kernel has {Kc.shape[0] if Kc.ndim else 0} rows, model has "
            f"{len(model.train_ids)} training items")
    scores = model.coefficients @ Kc
    if model.bias is not None:
        scores = scores + model.bias
    return scores


def check_meta(model: DualModel, meta: dict) -> None:
    """Refuse a kernel whose sigma/gamma/estimator differ from training."""
    bad = []
    for key in META_KEYS:
        if key not in model.kernel_meta:
            continue
        want, got = model.kernel_meta[key], meta.get(key)
        if isinstance(want, float) and isinstance(got, (int, float)):
            same = abs(want - got) <= 1e-12 * max(1.0, abs(want))
        else:
            same = want == got
        if not same:
            bad.append(f"{key}: model={want!r} kernel={got!r}")
    if bad:
        raise MetaMismatchError("kernel meta does not match the model (" + "; ".join(bad) + ")")


def predict_from_kernel(model: DualModel, K, query_ids) -> np.ndarray:
    """Score ``query_ids`` using a full labelled kernel matrix."""
    check_meta(model, K.meta())
    return predict(model, K.block(model.train_ids, query_ids))


def model_to_dict(model: DualModel) -> dict:
    return {
        "task": model.task,
        "train_ids": list(model.train_ids),
        "coefficients": [float(c) for c in model.coefficients],
        "bias": None if model.bias is None else float(model.bias),
        "hyperparams": model.hyperparams,
        "kernel_meta": model.kernel_meta,
    }


def model_from_dict(data: dict) -> DualModel:
    try:
        return DualModel(data["task"], tuple(data["train_ids"]), data["coefficients"],
                         data.get("bias"), dict(data.get("hyperparams", {})),
                         dict(data.get("kernel_meta", {})))
    except KeyError as exc:
        raise FormatError(f"model file lacks field {exc}") from None


def save_model(path, model: DualModel) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def load_model(path) -> DualModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
