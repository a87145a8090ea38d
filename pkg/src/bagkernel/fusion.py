"""Binary topic kernels and unweighted sum/product kernel fusion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import FormatError, ValidationError
from .matrices import KernelMatrix

TOPIC_SIGMA = 10.0
N_TOPICS = 200


@dataclass(frozen=True)
class TopicProfiles:
    patient_ids: tuple
    topics: np.ndarray  # (patients, n_topics) of 0/1

    def __post_init__(self):
        t = np.asarray(self.topics)
        if t.ndim != 2 or t.shape[0] != len(self.patient_ids):
            raise ValidationError("one topic row per patient is required")
        if not np.isin(t, (0, 1)).all():
            raise ValidationError("topic entries must be 0 or 1")
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise ValidationError("duplicate patient ids in topic profiles")
        object.__setattr__(self, "patient_ids", tuple(self.patient_ids))
        object.__setattr__(self, "topics", t.astype(np.float64))


def read_topics(path, n_topics: int | None = N_TOPICS) -> TopicProfiles:
    """CSV: header row, then ``patient_id`` followed by the binary topic columns."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FormatError(f"{path}: empty topic file")
        ids, rows = [], []
        for rec in reader:
            if not rec:
                continue
            ids.append(rec[0].strip())
            try:
                rows.append([int(v) for v in rec[1:]])
            except ValueError:
                raise ValidationError(f"{path}: non-integer topic value for {rec[0]!r}") from None
    width = len(header) - 1
    if n_topics is not None and width != n_topics:
        raise FormatError(f"{path}: expected {n_topics} topic columns, found {width}")
    if any(len(r) != width for r in rows):
        raise FormatError(f"{path}: ragged topic rows")
    return TopicProfiles(tuple(ids), np.array(rows).reshape(len(rows), width))


def topic_kernel(profiles: TopicProfiles, sigma: float = TOPIC_SIGMA) -> KernelMatrix:
    """RBF over binary topic vectors: ``exp(-||t_i - t_j||^2 / (2 sigma^2))``.

    The denominator is ``2 sigma^2``, unlike the ``4 sigma^2`` patch kernel.
    """
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    sq = cdist(profiles.topics, profiles.topics, "sqeuclidean")
    sq = np.maximum(sq, sq.T)  # exact symmetry
    values = np.exp(-sq / (2.0 * sigma * sigma))
    return KernelMatrix(profiles.patient_ids, values, None, f"topic rbf sigma={sigma:g}",
                        None, None)


def align(kernels) -> list:
    """Restrict every kernel to the sorted intersection of their ids."""
    kernels = list(kernels)
    if not kernels:
        raise ValidationError("nothing to align")
    common = set(kernels[0].ids)
    for K in kernels[1:]:
        common &= set(K.ids)
    if not common:
        raise ValidationError("kernels share no ids")
    ids = sorted(common)
    return [K.restrict(ids) for K in kernels]


def combine(kernels, mode: str, rescale: bool = True) -> KernelMatrix:
    """Entrywise sum or Hadamard product of aligned kernels.

    Sums are divided by the number of kernels when ``rescale`` is set,
    keeping a unit diagonal and entries in [0, 1].
    """
    kernels = list(kernels)
    if len(kernels) < 2:
        raise ValidationError("combine needs at least two kernels")
    if mode not in ("sum", "product"):
        raise ValidationError(f"mode must be 'sum' or 'product', got {mode!r}")
    ids = kernels[0].ids
    for K in kernels[1:]:
        if K.ids != ids:
            raise ValidationError("kernels are not aligned; call align() first")
    if mode == "sum":
        values = np.sum([K.values for K in kernels], axis=0)
        if rescale:
            values = values / len(kernels)
    else:
        values = np.prod([K.values for K in kernels], axis=0)
    recipe = f"{mode}({', '.join(K.provenance or '?' for K in kernels)})"
    if mode == "sum" and not rescale:
        recipe += " raw"
    return KernelMatrix(ids, values, None, recipe, None, None)
