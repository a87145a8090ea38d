"""Distance and kernel matrices with their binary file format.

SMM1 layout, little-endian::

    magic   b"SMM1"
    version u16 = 1
    kind    u8  (0 distance, 1 kernel)
    N       u32
    values  N*N float64, row-major

Identity lives in ``<file>.meta.json``: ids, sigma, gamma, estimator,
provenance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MATRIX_MAGIC = b"SMM1"
MATRIX_VERSION = 1
KIND_DISTANCE = 0
KIND_KERNEL = 1
_HEADER = struct.Struct("<4sHBI")


def _square(values, ids):
    v = np.array(values, dtype=np.float64, copy=True)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {v.shape}")
    if len(ids) != v.shape[0]:
        raise ValidationError(f"{len(ids)} ids for a {v.shape[0]}x{v.shape[0]} matrix")
    if len(set(ids)) != len(ids):
        raise ValidationError("matrix ids are not unique")
    if not np.all(np.isfinite(v)):
        raise ValidationError("matrix contains non-finite values")
    v.setflags(write=False)
    return v


class _Labelled:
    """Shared id bookkeeping for square matrices."""

    def index(self, bag_id):
        try:
            return self._pos[bag_id]
        except KeyError:
            raise KeyError(f"unknown id {bag_id!r}") from None

    def indices(self, ids):
        return np.array([self.index(i) for i in ids], dtype=np.intp)

    def block(self, row_ids, col_ids):
        return self.values[np.ix_(self.indices(row_ids), self.indices(col_ids))]

    @property
    def n(self):
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class DistanceMatrix(_Labelled):
    ids: tuple
    values: np.ndarray
    sigma: float | None = None
    estimator: str = "biased"
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", _square(self.values, self.ids))
        object.__setattr__(self, "_pos", {k: i for i, k in enumerate(self.ids)})
        if np.any(self.values < 0):
            raise ValidationError("distance matrix has negative entries")

    def restrict(self, ids) -> "DistanceMatrix":
        return DistanceMatrix(tuple(ids), self.block(ids, ids), self.sigma,
                              self.estimator, self.provenance)

    def meta(self) -> dict:
        return {"ids": list(self.ids), "sigma": self.sigma, "gamma": None,
                "estimator": self.estimator, "provenance": self.provenance}


@dataclass(frozen=True, eq=False)
class KernelMatrix(_Labelled):
    ids: tuple
    values: np.ndarray
    gamma: float | None = None
    provenance: str = ""
    sigma: float | None = None
    estimator: str | None = "biased"

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", _square(self.values, self.ids))
        object.__setattr__(self, "_pos", {k: i for i, k in enumerate(self.ids)})

    def restrict(self, ids) -> "KernelMatrix":
        return KernelMatrix(tuple(ids), self.block(ids, ids), self.gamma,
                            self.provenance, self.sigma, self.estimator)

    def meta(self) -> dict:
        return {"ids": list(self.ids), "sigma": self.sigma, "gamma": self.gamma,
                "estimator": self.estimator, "provenance": self.provenance}


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def encode_matrix(values: np.ndarray, kind: int) -> bytes:
    n = values.shape[0]
    return _HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, kind, n) + \
        np.ascontiguousarray(values, dtype="<f8").tobytes()


def save_matrix(path, matrix) -> list:
    """Write ``matrix`` and its sidecar; returns both paths."""
    kind = KIND_KERNEL if isinstance(matrix, KernelMatrix) else KIND_DISTANCE
    path = Path(path)
    path.write_bytes(encode_matrix(matrix.values, kind))
    side = meta_path(path)
    side.write_text(json.dumps(matrix.meta(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [path, side]


def load_matrix(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: shorter than header")
    magic, version, kind, n = _HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MATRIX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind not in (KIND_DISTANCE, KIND_KERNEL):
        raise FormatError(f"{path}: unknown matrix kind {kind}")
    if len(data) != _HEADER.size + 8 * n * n:
        raise FormatError(f"{path}: payload size does not match N={n}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n, n)
    side = meta_path(path)
    if not side.exists():
        raise FormatError(f"{path}: missing sidecar {side.name}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    ids = meta.get("ids")
    if ids is None or len(ids) != n:
        raise FormatError(f"{side}: ids do not match N={n}")
    if kind == KIND_DISTANCE:
        return DistanceMatrix(tuple(ids), values, meta.get("sigma"),
                              meta.get("estimator") or "biased", meta.get("provenance", ""))
    return KernelMatrix(tuple(ids), values, meta.get("gamma"), meta.get("provenance", ""),
                        meta.get("sigma"), meta.get("estimator"))
