"""Patient-grouped, stratified cross-validation and grid tuning."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ..analysis.stats import auc_roc, spearman
from ..analysis.survival import aggregate_pvalues, concordance_index, logrank, median_split
from ..errors import BagKernelError, ValidationError
from ..matrices import DistanceMatrix, KernelMatrix
from ..mmd import median_gamma
from .model import predict
from .survival import DEFAULT_ALPHA, SurvivalRecord, fit_survival
from .svm import fit_svc, fit_svr

log = logging.getLogger(__name__)

SVR_GRID = {"C": (0.1, 1.0, 10.0, 100.0), "epsilon": (0.01, 0.1), "gamma_scale": (1.0, 2.0)}
SVC_GRID = {"C": (0.1, 1.0, 10.0, 100.0), "gamma_scale": (1.0, 2.0)}
ALPHA_BOUNDS = (2.0 ** -12, 0.125)


def alpha_grid(n=13, bounds=ALPHA_BOUNDS):
    return tuple(float(a) for a in np.geomspace(bounds[0], bounds[1], n))


def expand_grid(grid: dict) -> list:
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in product(*(grid[k] for k in keys))]


def default_grid(task: str) -> list:
    if task == "svr":
        return expand_grid(SVR_GRID)
    if task == "svc":
        return expand_grid(SVC_GRID)
    return [{"alpha": DEFAULT_ALPHA, "gamma_scale": 1.0}]


def _regularization_key(params):
    # smaller sorts first = more regularized
    return (-params.get("alpha", 0.0), params.get("C", 0.0), -params.get("epsilon", 0.0),
            params.get("gamma_scale", 1.0))


def tune(grid, objective, threads=1, tie_tol=1e-12):
    """Return ``(best_params, best_value)`` minimizing ``objective(params)``.

    Candidates that raise are skipped. Ties within ``tie_tol`` go to the
    more regularized candidate: larger alpha, then smaller C.
    """
    grid = list(grid)
    if not grid:
        raise ValidationError("empty hyperparameter grid")

    errors = []

    def run(params):
        try:
            return float(objective(params))
        except BagKernelError as exc:
            log.debug("candidate %s failed: %s", params, exc)
            errors.append(str(exc))
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(run, grid))
    else:
        values = [run(p) for p in grid]
    scored = [(v, p) for v, p in zip(values, grid) if v is not None and math.isfinite(v)]
    if not scored:
        reason = f" (e.g. {errors[0]})" if errors else ""
        raise BagKernelError(f"every hyperparameter candidate failed to train{reason}")
    best = min(v for v, _ in scored)
    tied = [p for v, p in scored if v <= best + tie_tol]
    return min(tied, key=_regularization_key), best


# ---------------------------------------------------------------- splitting

def _strata(ids, labels, stratify):
    if not stratify:
        return {i: "" for i in ids}
    return {i: str(labels[i]) for i in ids}


def _group_strata(ids, groups, strata):
    members = defaultdict(list)
    for i in ids:
        members[groups[i]].append(i)
    out = {}
    for g, its in members.items():
        votes = defaultdict(int)
        for i in its:
            votes[strata[i]] += 1
        top = max(votes.values())
        out[g] = min(s for s, c in votes.items() if c == top)
    return members, out


def make_folds(ids, folds, groups=None, strata=None, seed=0):
    """Partition ``ids`` into ``folds`` test sets.

    Whole groups (patients) are dealt round-robin to folds after a seeded
    shuffle within each stratum, so no group spans two folds.
    """
    ids = list(ids)
    if folds < 2:
        raise ValidationError("need at least two folds")
    groups = groups or {i: i for i in ids}
    strata = strata or {i: "" for i in ids}
    members, gstrat = _group_strata(ids, groups, strata)
    by_stratum = defaultdict(list)
    for g in sorted(members, key=str):
        by_stratum[gstrat[g]].append(g)
    short = {s: len(gs) for s, gs in by_stratum.items() if len(gs) < folds}
    if short:
        detail = ", ".join(f"{s!r} has {n} groups" for s, n in sorted(short.items()))
        raise ValidationError(f"stratification infeasible for {folds} folds: {detail}")
    rng = np.random.default_rng(seed)
    out = [[] for _ in range(folds)]
    cursor = 0
    for s in sorted(by_stratum):
        gs = by_stratum[s]
        for k in rng.permutation(len(gs)):
            out[cursor % folds].extend(members[gs[k]])
            cursor += 1
    order = {i: n for n, i in enumerate(ids)}
    return [sorted(f, key=order.__getitem__) for f in out]


def holdout(ids, frac, groups=None, strata=None, seed=0):
    """Split ``ids`` into ``(train, val)`` with about ``frac`` of each stratum's groups in val."""
    ids = list(ids)
    groups = groups or {i: i for i in ids}
    strata = strata or {i: "" for i in ids}
    members, gstrat = _group_strata(ids, groups, strata)
    by_stratum = defaultdict(list)
    for g in sorted(members, key=str):
        by_stratum[gstrat[g]].append(g)
    rng = np.random.default_rng(seed)
    val = set()
    for s in sorted(by_stratum):
        gs = by_stratum[s]
        k = int(round(frac * len(gs)))
        if frac > 0 and len(gs) >= 2:
            k = min(max(k, 1), len(gs) - 1)
        for idx in rng.permutation(len(gs))[:k]:
            val.update(members[gs[idx]])
    train = [i for i in ids if i not in val]
    return train, [i for i in ids if i in val]


# ------------------------------------------------------------ evaluation

@dataclass
class FoldResult:
    fold: int
    test_ids: list
    predictions: np.ndarray
    metric: float
    params: dict
    gamma: float | None = None
    logrank_p: float | None = None


@dataclass
class FoldResults:
    task: str
    metric_name: str
    folds: list = field(default_factory=list)

    @property
    def values(self):
        return np.array([f.metric for f in self.folds])

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def sd(self) -> float:
        v = self.values
        return float(v.std(ddof=1)) if v.size > 1 else 0.0

    @property
    def logrank_p(self):
        ps = [f.logrank_p for f in self.folds if f.logrank_p is not None]
        return aggregate_pvalues(ps) if ps else None


METRIC_NAMES = {"svr": "spearman", "svc": "auc_roc", "survival": "c_index"}


def _labels_for(task, ids, labels):
    if task == "survival":
        return [labels[i] if isinstance(labels[i], SurvivalRecord)
                else SurvivalRecord(str(i), float(labels[i][0]), int(labels[i][1])) for i in ids]
    values = np.array([float(labels[i]) for i in ids])
    if task == "svc":
        classes = sorted(set(values.tolist()))
        if len(classes) != 2:
            raise ValidationError(f"classification needs two classes, got {classes}")
        if classes != [-1.0, 1.0]:
            values = np.where(values == classes[1], 1.0, -1.0)
    return values


def _fit(task, K, target, params, ids):
    if task == "svr":
        return fit_svr(K, target, params["C"], params["epsilon"], train_ids=ids)
    if task == "svc":
        return fit_svc(K, target, params["C"], train_ids=ids)
    return fit_survival(K, target, params["alpha"], train_ids=ids)


def metric(task, target, scores) -> float:
    if task == "svr":
        return spearman(target, scores)[0]
    if task == "svc":
        return auc_roc((np.asarray(target) > 0).astype(int), scores).auc
    return concordance_index(target, scores)


class _KernelSource:
    """Kernel blocks for a fold: fixed kernel, or exp(-gamma D) with a fold-local median."""

    def __init__(self, matrix, train_ids):
        self.matrix = matrix
        if isinstance(matrix, DistanceMatrix):
            self.base_gamma = median_gamma(matrix.restrict(train_ids))
        else:
            self.base_gamma = None

    def block(self, rows, cols, gamma_scale=1.0):
        B = self.matrix.block(rows, cols)
        if self.base_gamma is None:
            return B
        return np.exp(-(self.base_gamma * gamma_scale) * B)

    def gamma(self, gamma_scale=1.0):
        return None if self.base_gamma is None else self.base_gamma * gamma_scale


def cross_validate(matrix, labels, task, folds=5, val_frac=0.1, stratify=None,
                   patients=None, grid=None, objective=None, seed=0, threads=1):
    """K-fold evaluation of one task over a distance or kernel matrix.

    ``labels`` maps id -> value (svr: real, svc: two classes, survival:
    :class:`SurvivalRecord` or ``(time, event)``); ids without a label are
    skipped. Folds group by ``patients`` (id -> patient) and stratify on
    class or event unless ``stratify`` is False. With a distance matrix the
    median-rule gamma is recomputed on each training fold. When ``grid``
    has more than one point, ``val_frac`` of the training fold is held out
    to pick hyperparameters by ``objective(params, val_metric)`` (default
    ``-val_metric``), then the model is refit on the whole training fold.
    """
    if task not in METRIC_NAMES:
        raise ValidationError(f"unknown task {task!r}")
    if not isinstance(matrix, (DistanceMatrix, KernelMatrix)):
        raise ValidationError("cross_validate needs a DistanceMatrix or KernelMatrix")
    ids = [i for i in matrix.ids if i in labels and labels[i] not in ("", None)]
    if stratify is None:
        stratify = task in ("svc", "survival")
    if task == "survival":
        strat_labels = {i: _labels_for(task, [i], labels)[0].event for i in ids}
    else:
        strat_labels = labels
    strata = _strata(ids, strat_labels, stratify)
    groups = {i: (patients or {}).get(i, i) for i in ids}
    grid = default_grid(task) if grid is None else list(grid)
    objective = objective or (lambda params, value: -value)

    result = FoldResults(task, METRIC_NAMES[task])
    for k, test_ids in enumerate(make_folds(ids, folds, groups, strata, seed)):
        test_set = set(test_ids)
        train_ids = [i for i in ids if i not in test_set]
        source = _KernelSource(matrix, train_ids)
        if len(grid) > 1:
            inner, val = holdout(train_ids, val_frac, groups, strata, seed + 1000 + k)
            if not val:
                raise ValidationError("validation split is empty; raise val_frac")
            y_inner = _labels_for(task, inner, labels)
            y_val = _labels_for(task, val, labels)

            def score(params, inner=inner, val=val, y_inner=y_inner, y_val=y_val):
                gs = params.get("gamma_scale", 1.0)
                model = _fit(task, source.block(inner, inner, gs), y_inner, params, inner)
                s = predict(model, source.block(inner, val, gs))
                return objective(params, metric(task, y_val, s))

            params, _ = tune(grid, score, threads)
        else:
            params = grid[0]
        gs = params.get("gamma_scale", 1.0)
        y_train = _labels_for(task, train_ids, labels)
        y_test = _labels_for(task, test_ids, labels)
        model = _fit(task, source.block(train_ids, train_ids, gs), y_train, params, train_ids)
        scores = predict(model, source.block(train_ids, test_ids, gs))
        fold = FoldResult(k, list(test_ids), scores, metric(task, y_test, scores), dict(params),
                          source.gamma(gs))
        if task == "survival":
            train_scores = predict(model, source.block(train_ids, train_ids, gs))
            split = median_split(train_scores, scores)
            if len(set(split.tolist())) == 2 and any(r.event for r in y_test):
                fold.logrank_p = logrank(y_test, split).p_value
        log.info("fold %d: %s=%.4f params=%s", k, result.metric_name, fold.metric, params)
        result.folds.append(fold)
    return result
