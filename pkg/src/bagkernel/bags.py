"""Embedding bags, their binary format, and dataset manifests.

A bag is an unordered multiset of ``d``-dimensional vectors (one per
patch). On disk a bag is::

    magic  b"SMB1"     4 bytes
    version u16 = 1
    d       u32
    n       u64
    payload n*d float32, row-major

all little-endian. Vectors are held as float64 in memory.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, FormatError, ValidationError

BAG_MAGIC = b"SMB1"
BAG_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")

REQUIRED_COLUMNS = ("id", "path", "patient")


@dataclass(frozen=True, eq=False)
class EmbeddingBag:
    """One sample as a set of embedding vectors."""

    id: str
    patient_id: str
    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValidationError(f"bag {self.id!r}: vectors must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1:
            raise ValidationError(f"bag {self.id!r} is empty")
        if v.shape[1] < 1:
            raise ValidationError(f"bag {self.id!r} has zero-dimensional vectors")
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"bag {self.id!r} contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def without(self, index: int) -> "EmbeddingBag":
        """Copy of the bag with row ``index`` removed."""
        if self.n < 2:
            raise ValidationError(f"bag {self.id!r}: cannot remove from a single-vector bag")
        return EmbeddingBag(self.id, self.patient_id, np.delete(self.vectors, index, axis=0))


def encode_bag(vectors: np.ndarray) -> bytes:
    v = np.asarray(vectors)
    if v.ndim != 2:
        raise ValidationError("vectors must be 2-D")
    n, d = v.shape
    payload = np.ascontiguousarray(v, dtype="<f4").tobytes()
    return _HEADER.pack(BAG_MAGIC, BAG_VERSION, d, n) + payload


def write_bag(path, bag) -> None:
    """Write a bag (or a bare ``(n, d)`` array) in the SMB1 format."""
    vectors = bag.vectors if isinstance(bag, EmbeddingBag) else bag
    Path(path).write_bytes(encode_bag(vectors))


def decode_bag(data: bytes, bag_id: str = "", patient_id: str = "") -> EmbeddingBag:
    if len(data) < _HEADER.size:
        raise FormatError(f"bag {bag_id!r}: file shorter than header")
    magic, version, d, n = _HEADER.unpack_from(data)
    if magic != BAG_MAGIC:
        raise FormatError(f"bag {bag_id!r}: bad magic {magic!r}")
    if version != BAG_VERSION:
        raise FormatError(f"bag {bag_id!r}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * d
    if len(data) != expected:
        raise FormatError(
            f"bag {bag_id!r}: payload is {len(data) - _HEADER.size} bytes, "
            f"header promises {4 * n * d}"
        )
    if n == 0:
        raise ValidationError(f"bag {bag_id!r} is empty")
    values = np.frombuffer(data, dtype="<f4", count=n * d, offset=_HEADER.size)
    return EmbeddingBag(bag_id, patient_id, values.reshape(n, d).astype(np.float64))


def load_bag(path, bag_id: str | None = None, patient_id: str = "") -> EmbeddingBag:
    path = Path(path)
    return decode_bag(path.read_bytes(), bag_id if bag_id is not None else path.stem, patient_id)


@dataclass(frozen=True)
class ManifestRow:
    id: str
    path: str
    patient_id: str
    labels: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple
    label_columns: tuple
    base_dir: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.id in seen:
                raise ValidationError(f"duplicate id {row.id!r} in manifest")
            seen.add(row.id)

    @property
    def ids(self) -> list:
        return [r.id for r in self.rows]

    def row(self, bag_id: str) -> ManifestRow:
        for r in self.rows:
            if r.id == bag_id:
                return r
        raise KeyError(bag_id)

    def labels(self, column: str) -> dict:
        """Map id -> label for rows where ``column`` is present and nonempty."""
        return {r.id: r.labels[column] for r in self.rows if r.labels.get(column, "") != ""}

    def patients(self) -> dict:
        return {r.id: r.patient_id for r in self.rows}


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"manifest {path}: missing columns {missing}")
        label_columns = tuple(c for c in header if c not in REQUIRED_COLUMNS)
        rows = []
        for rec in reader:
            labels = {c: (rec.get(c) or "").strip() for c in label_columns}
            rows.append(ManifestRow(rec["id"].strip(), rec["path"].strip(),
                                    rec["patient"].strip(), labels))
    return DatasetManifest(tuple(rows), label_columns, path.parent)


def write_manifest(path, rows, label_columns=()) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*REQUIRED_COLUMNS, *label_columns])
        for r in rows:
            w.writerow([r.id, r.path, r.patient_id, *(r.labels.get(c, "") for c in label_columns)])


@dataclass(frozen=True)
class Dataset:
    """Bags in manifest order plus the manifest they came from."""

    bags: tuple
    manifest: DatasetManifest

    def __len__(self):
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    @property
    def ids(self) -> list:
        return [b.id for b in self.bags]

    @property
    def d(self) -> int:
        return self.bags[0].d

    def bag(self, bag_id: str) -> EmbeddingBag:
        for b in self.bags:
            if b.id == bag_id:
                return b
        raise KeyError(bag_id)

    def subset(self, ids) -> "Dataset":
        wanted = set(ids)
        return Dataset(tuple(b for b in self.bags if b.id in wanted), self.manifest)


def make_dataset(bags, manifest: DatasetManifest | None = None) -> Dataset:
    """Build a dataset from in-memory bags, checking ids and dimensions."""
    bags = tuple(bags)
    if manifest is None:
        rows = tuple(ManifestRow(b.id, "", b.patient_id) for b in bags)
        manifest = DatasetManifest(rows, ())
    _check_uniform(bags)
    return Dataset(bags, manifest)


def _check_uniform(bags) -> None:
    seen = set()
    for b in bags:
        if b.id in seen:
            raise ValidationError(f"duplicate bag id {b.id!r}")
        seen.add(b.id)
    dims = {b.d for b in bags}
    if len(dims) > 1:
        detail = ", ".join(f"{b.id}:d={b.d}" for b in bags)
        raise DimensionMismatchError(f"bags have mixed dimensions ({detail})")


def load_dataset(manifest_path) -> Dataset:
    manifest = read_manifest(manifest_path)
    bags = []
    for row in manifest.rows:
        p = Path(row.path)
        if not p.is_absolute():
            p = manifest.base_dir / p
        if not p.exists():
            raise ValidationError(f"bag {row.id!r}: file {p} not found")
        bags.append(load_bag(p, row.id, row.patient_id))
    return make_dataset(bags, manifest)


def exclude_patient(dataset: Dataset, patient_id: str) -> Dataset:
    """View of ``dataset`` without any bag from ``patient_id``."""
    return Dataset(tuple(b for b in dataset.bags if b.patient_id != patient_id),
                   dataset.manifest)
