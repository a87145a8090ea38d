"""Leave-one-patch-out sensitivity and representative patch selection.

For a trained model ``f`` and a query bag ``X`` the sensitivity of patch
``j`` is ``f(X without j) - f(X)``. Removing one patch only changes the
double sums behind each squared MMD, so every ``f(X without j)`` comes
from cached sums by a rank-one downdate rather than a fresh pass::

    S_self'  = S_self - 2 r_j + k(x_j, x_j)
    S_cross' = S_cross,t - c_{j,t}

with ``r_j`` the query's self-kernel row sums and ``c_{j,t}`` its row
sums against training bag ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .bags import Dataset, EmbeddingBag
from .errors import BagKernelError, ValidationError
from .machines.model import DualModel, check_meta
from .mmd import DEFAULT_TILE, NEG_TOL, PatchKernelParams, _params, kernel_rowsums

DEFAULT_MEDOIDS = 25


@dataclass(frozen=True)
class SensitivityMap:
    bag_id: str
    deltas: np.ndarray
    normalized: np.ndarray
    baseline: float


def minmax_normalize(values, atol=0.0) -> np.ndarray:
    """Rescale to [0, 1]; a constant input maps to 0.5 everywhere.

    Inputs whose range is at most ``atol`` count as constant.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("nothing to normalize")
    if not np.all(np.isfinite(v)):
        raise ValidationError("values must be finite")
    lo, hi = v.min(), v.max()
    if hi - lo <= atol:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def _training_bags(model, train_bags):
    if isinstance(train_bags, Dataset):
        lookup = {b.id: b for b in train_bags.bags}
    elif isinstance(train_bags, dict):
        lookup = train_bags
    else:
        lookup = {b.id: b for b in train_bags}
    try:
        return [lookup[i] for i in model.train_ids]
    except KeyError as exc:
        raise ValidationError(f"training bag {exc} is not available") from None


def _mmd_rows(s_self, n, s_train, m, s_cross):
    """Squared MMD for broadcastable arrays of sums, clamped like ``combine_sums``."""
    d = s_self / (n * n) + s_train / (m * m) - 2.0 * s_cross / (n * m)
    if np.any(d < -NEG_TOL):
        raise BagKernelError(f"downdated squared MMD came out at {d.min():.3e}")
    return np.maximum(d, 0.0)


class QueryCache:
    """Kernel sums between one query bag and a model's training bags."""

    def __init__(self, query: EmbeddingBag, train: list, params: PatchKernelParams,
                 tile=DEFAULT_TILE):
        self.query = query
        self.n = query.n
        self.params = params
        x = query.vectors
        self.row_self = kernel_rowsums(x, x, params, tile)
        self.s_self = math.fsum(self.row_self)
        self.m = np.array([b.n for b in train], dtype=np.float64)
        self.s_train = np.array([math.fsum(kernel_rowsums(b.vectors, b.vectors, params, tile))
                                 for b in train])
        # rows: query patches, columns: training bags
        self.cross_rows = np.column_stack([kernel_rowsums(x, b.vectors, params, tile)
                                           for b in train])
        self.s_cross = np.array([math.fsum(c) for c in self.cross_rows.T])

    def distances(self):
        return _mmd_rows(self.s_self, self.n, self.s_train, self.m, self.s_cross)

    def downdated_distances(self):
        """``(n_patches, n_train)`` squared MMD with each patch removed."""
        n1 = self.n - 1
        k_jj = 1.0  # Gaussian kernel at zero distance
        s_self = self.s_self - 2.0 * self.row_self + k_jj
        s_cross = self.s_cross[None, :] - self.cross_rows
        return _mmd_rows(s_self[:, None], n1, self.s_train[None, :], self.m[None, :], s_cross)


def patch_sensitivity(model: DualModel, train_bags, query: EmbeddingBag, params=None,
                      gamma=None, tile=DEFAULT_TILE) -> SensitivityMap:
    """Per-patch change in ``model``'s score when that patch is dropped.

    ``params`` and ``gamma`` default to the model's kernel meta and must
    agree with it when given.
    """
    if query.n < 2:
        raise ValidationError(f"bag {query.id!r} has one patch; nothing can be removed")
    meta = model.kernel_meta
    params = _params(params if params is not None else meta.get("sigma"))
    gamma = float(gamma if gamma is not None else meta.get("gamma"))
    check_meta(model, {"sigma": params.sigma, "gamma": gamma, "estimator": "biased"})
    train = _training_bags(model, train_bags)
    cache = QueryCache(query, train, params, tile)
    coef = model.coefficients
    bias = model.bias or 0.0
    baseline = float(coef @ np.exp(-gamma * cache.distances()) + bias)
    scores = np.exp(-gamma * cache.downdated_distances()) @ coef + bias
    deltas = scores - baseline
    # spreads at rounding level of the score itself are noise, not signal
    noise = 1e-12 * (abs(bias) + float(np.abs(coef).sum()))
    return SensitivityMap(query.id, deltas, minmax_normalize(deltas, noise), baseline)


def score_bag(model: DualModel, train_bags, bag: EmbeddingBag, params=None, gamma=None,
              tile=DEFAULT_TILE) -> float:
    """Model score for one bag computed from scratch."""
    meta = model.kernel_meta
    params = _params(params if params is not None else meta.get("sigma"))
    gamma = float(gamma if gamma is not None else meta.get("gamma"))
    cache = QueryCache(bag, _training_bags(model, train_bags), params, tile)
    return float(model.coefficients @ np.exp(-gamma * cache.distances()) + (model.bias or 0.0))


# ------------------------------------------------------------ medoids

@dataclass(frozen=True, eq=False)
class Candidate:
    patient_id: str
    bag_id: str
    patch_index: int
    score: float
    vector: np.ndarray

    @property
    def id(self) -> str:
        return f"{self.bag_id}:{self.patch_index}"


def extreme_patches(entries, mode="max", seed=0) -> list:
    """One candidate per patient: its highest (or lowest) scoring patch.

    ``entries`` yields ``(bag, SensitivityMap)``; draws are broken by a
    seeded random pick.
    """
    if mode not in ("max", "min"):
        raise ValidationError("mode must be 'max' or 'min'")
    per_patient = {}
    for bag, smap in entries:
        for j, s in enumerate(smap.deltas):
            per_patient.setdefault(bag.patient_id, []).append((float(s), bag, j))
    rng = np.random.default_rng(seed)
    out = []
    for patient in sorted(per_patient):
        items = per_patient[patient]
        vals = np.array([s for s, _, _ in items])
        best = vals.max() if mode == "max" else vals.min()
        hits = np.flatnonzero(vals == best)
        s, bag, j = items[int(hits[rng.integers(len(hits))]) if len(hits) > 1 else int(hits[0])]
        out.append(Candidate(patient, bag.id, j, s, bag.vectors[j]))
    return out


@dataclass(frozen=True)
class PAMResult:
    medoids: np.ndarray  # candidate indices
    labels: np.ndarray
    cost: float
    history: list


def pam(points, k: int) -> PAMResult:
    """k-medoids under Euclidean distance: greedy BUILD, then best-improvement SWAP."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= K <= {n} candidates, got K={k}")
    D = cdist(X, X)
    medoids = [int(np.argmin(D.sum(axis=0)))]
    nearest = D[medoids[0]].copy()
    while len(medoids) < k:
        gain = np.maximum(nearest[:, None] - D, 0.0).sum(axis=0)
        gain[medoids] = -1.0
        c = int(np.argmax(gain))
        medoids.append(c)
        nearest = np.minimum(nearest, D[c])
    cost = float(nearest.sum())
    history = [cost]
    while True:
        is_med = np.zeros(n, dtype=bool)
        is_med[medoids] = True
        best = (cost, None, None)
        for mi in range(k):
            others = [m for idx, m in enumerate(medoids) if idx != mi]
            base = D[others].min(axis=0) if others else np.full(n, np.inf)
            # cost of swapping medoid mi for each non-medoid h
            totals = np.minimum(base[None, :], D).sum(axis=1)
            totals[is_med] = np.inf
            h = int(np.argmin(totals))
            if totals[h] < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (float(totals[h]), mi, h)
        if best[1] is None:
            break
        medoids[best[1]] = best[2]
        cost = best[0]
        history.append(cost)
    med = np.array(medoids)
    labels = np.argmin(D[med], axis=0)
    return PAMResult(med, labels, cost, history)


def representative_patches(candidates, k: int = DEFAULT_MEDOIDS) -> list:
    """The ``k`` medoid candidates of a per-patient extreme patch set."""
    candidates = list(candidates)
    if len(candidates) < k:
        raise ValidationError(f"{len(candidates)} candidates for K={k} medoids")
    res = pam(np.stack([c.vector for c in candidates]), k)
    return [candidates[i] for i in res.medoids]
