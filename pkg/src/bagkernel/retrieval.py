"""Top-k retrieval from a kernel matrix and the mMV@k score."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .matrices import KernelMatrix


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    neighbors: tuple  # ((id, similarity), ...) best first
    k: int

    @property
    def ids(self):
        return [n for n, _ in self.neighbors]


def _pool(K, query_id, patients, sites):
    q_patient = patients.get(query_id)
    q_site = sites.get(query_id) if sites else None
    out = []
    for idx, other in enumerate(K.ids):
        if other == query_id:
            continue
        if q_patient is not None and patients.get(other) == q_patient:
            continue
        if sites and sites.get(other) != q_site:
            continue
        out.append(idx)
    return np.array(out, dtype=np.intp)


def query_top_k(K: KernelMatrix, patients: dict, query_id: str, k: int,
                sites: dict | None = None) -> RetrievalResult:
    """The ``k`` most similar bags to ``query_id``.

    The query itself and every bag of the same patient are excluded; with
    ``sites`` the pool is limited to the query's site. Equal similarities
    keep kernel (manifest) order.
    """
    if k < 1:
        raise ValidationError("k must be at least 1")
    q = K.index(query_id)
    pool = _pool(K, query_id, patients, sites)
    if pool.size < k:
        raise ValidationError(f"query {query_id!r}: pool has {pool.size} eligible bags, k={k}")
    row = K.values[q, pool]
    order = np.argsort(-row, kind="stable")[:k]
    neighbors = tuple((K.ids[pool[o]], float(row[o])) for o in order)
    return RetrievalResult(query_id, neighbors, k)


def majority_hit(truth, ranked_labels) -> bool:
    """True when ``truth`` wins the vote among ``ranked_labels``.

    Truth must reach the top count; among labels tied at the top, the one
    whose best-ranked occurrence comes first wins.
    """
    counts = Counter(ranked_labels)
    top = max(counts.values())
    tied = {lab for lab, c in counts.items() if c == top}
    if truth not in tied:
        return False
    for lab in ranked_labels:
        if lab in tied:
            return lab == truth
    return False


@dataclass(frozen=True)
class MMVReport:
    k: int
    per_query: dict  # id -> 0/1
    per_label: dict  # label -> percentage
    macro: float
    micro: float


def mmv_report(K: KernelMatrix, patients: dict, labels: dict, k: int = 5,
               sites: dict | None = None, results: dict | None = None) -> MMVReport:
    """Majority vote at the top ``k`` for every bag as query, in percent.

    ``micro`` averages over queries; ``macro`` averages the per-label
    rates. Pass ``results`` to reuse retrievals already computed.
    """
    missing = [i for i in K.ids if labels.get(i, "") in ("", None)]
    if missing:
        raise ValidationError(f"missing labels for ids: {missing}")
    hits = {}
    for qid in K.ids:
        res = results[qid] if results and qid in results else query_top_k(K, patients, qid, k, sites)
        hits[qid] = int(majority_hit(labels[qid], [labels[n] for n in res.ids[:k]]))
    by_label = {}
    for qid, h in hits.items():
        by_label.setdefault(labels[qid], []).append(h)
    per_label = {lab: 100.0 * float(np.mean(v)) for lab, v in sorted(by_label.items())}
    micro = 100.0 * float(np.mean(list(hits.values())))
    macro = float(np.mean(list(per_label.values())))
    return MMVReport(k, hits, per_label, macro, micro)


def mmv_at_k(K: KernelMatrix, patients: dict, labels: dict, k: int = 5,
             sites: dict | None = None) -> float:
    """Percentage of queries whose label wins the top-``k`` vote."""
    return mmv_report(K, patients, labels, k, sites).micro
