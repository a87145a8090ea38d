"""Ward clustering of kernel-derived distances and CSV export for external embedding tools."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, ValidationError
from ..matrices import DistanceMatrix, KernelMatrix

# neighbourhood embedding settings recommended alongside exported matrices
EMBEDDING_SETTINGS = {"metric": "precomputed", "min_dist": 0.0, "n_neighbors": 100}


@dataclass(frozen=True)
class Dendrogram:
    """Merges in linkage-matrix form.

    Row ``k`` of ``merges`` is ``(a, b, height, size)``; leaves are ``0..N-1``
    and the cluster made at step ``k`` is ``N + k``.
    """

    merges: np.ndarray
    leaf_ids: tuple

    def cut(self, n_clusters: int) -> np.ndarray:
        """Flat labels for ``n_clusters`` clusters, numbered by first leaf."""
        n = len(self.leaf_ids)
        if not 1 <= n_clusters <= n:
            raise ValidationError(f"cannot cut {n} leaves into {n_clusters} clusters")
        parent = list(range(2 * n - 1))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for k in range(n - n_clusters):
            a, b = int(self.merges[k, 0]), int(self.merges[k, 1])
            parent[find(a)] = n + k
            parent[find(b)] = n + k
        roots = [find(i) for i in range(n)]
        relabel = {}
        for r in roots:
            relabel.setdefault(r, len(relabel))
        return np.array([relabel[r] for r in roots])


def kernel_to_distance(K: KernelMatrix) -> np.ndarray:
    """``1 - K``, with an exact zero diagonal."""
    D = 1.0 - K.values
    np.fill_diagonal(D, 0.0)
    return D


def ward_cluster(D, ids=None) -> Dendrogram:
    """Agglomerative Ward clustering by Lance-Williams updates.

    Input is a symmetric dissimilarity matrix with zero diagonal (for
    example ``1 - K``). The closest pair merges first; equal distances
    go to the lowest index pair.
    """
    if isinstance(D, DistanceMatrix):
        ids = D.ids
        D = D.values
    d = np.array(D, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ValidationError("distance matrix must be square")
    if n < 2:
        raise ValidationError("Ward clustering needs at least two items")
    if not np.array_equal(d, d.T) or np.any(np.diag(d) != 0):
        raise ValidationError("distance matrix must be symmetric with zero diagonal")
    ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(n))

    d2 = d * d
    active = np.ones(n, dtype=bool)
    size = np.ones(n)
    node = np.arange(n)
    merges = np.zeros((n - 1, 4))
    big = np.inf
    work = d2.copy()
    np.fill_diagonal(work, big)
    for step in range(n - 1):
        flat = int(np.argmin(work))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        height = float(np.sqrt(work[i, j]))
        a, b = sorted((int(node[i]), int(node[j])))
        merges[step] = (a, b, height, size[i] + size[j])
        ni, nj = size[i], size[j]
        nk = size
        upd = ((ni + nk) * work[i] + (nj + nk) * work[j] - nk * work[i, j]) / (ni + nj + nk)
        # merged cluster takes slot i; slot j retires
        upd[~active] = big
        upd[i] = big
        upd[j] = big
        work[i, :] = upd
        work[:, i] = upd
        work[j, :] = big
        work[:, j] = big
        active[j] = False
        size[i] = ni + nj
        node[i] = n + step
    return Dendrogram(merges, ids)


def export_distances(D, path) -> list:
    """Write a headerless square CSV and ``<path>.meta.json`` with ids and embedding settings."""
    path = Path(path)
    values = D.values
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in values:
            w.writerow([repr(float(v)) for v in row])
    side = path.with_name(path.name + ".meta.json")
    meta = {"ids": list(D.ids), "kind": "kernel" if isinstance(D, KernelMatrix) else "distance",
            "embedding": dict(EMBEDDING_SETTINGS)}
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [path, side]


def import_distances(path):
    """Read back a matrix written by :func:`export_distances` as ``(ids, values)``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    values = np.array(rows)
    side = path.with_name(path.name + ".meta.json")
    ids = json.loads(side.read_text(encoding="utf-8"))["ids"] if side.exists() else None
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise FormatError(f"{path}: not a square matrix")
    if ids is not None and len(ids) != values.shape[0]:
        raise FormatError(f"{path}: sidecar ids do not match matrix size")
    return ids, values
