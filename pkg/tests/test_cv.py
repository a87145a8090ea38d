import numpy as np
import pytest

from bagkernel.analysis.survival import concordance_index
from bagkernel.bags import EmbeddingBag
from bagkernel.errors import BagKernelError, ValidationError
from bagkernel.machines import (
    SurvivalRecord,
    alpha_grid,
    cross_validate,
    fit_svr,
    fit_survival,
    make_folds,
    predict,
    tune,
)
from bagkernel.machines.cv import holdout, metric
from bagkernel.matrices import DistanceMatrix
from bagkernel.mmd import median_gamma, pairwise_distances


def test_ten_patients_five_folds():
    ids = [f"s{i}" for i in range(20)]
    groups = {s: f"P{i // 2}" for i, s in enumerate(ids)}
    folds = make_folds(ids, 5, groups, seed=3)
    assert sorted(sum(folds, [])) == sorted(ids)
    for f in folds:
        patients = {groups[s] for s in f}
        assert len(patients) == 2
        assert all(groups[s] in patients for s in f)
        assert len(f) == 4


def test_folds_deterministic():
    ids = [f"s{i}" for i in range(30)]
    strata = {s: str(i % 2) for i, s in enumerate(ids)}
    a = make_folds(ids, 4, strata=strata, seed=11)
    b = make_folds(ids, 4, strata=strata, seed=11)
    assert a == b
    assert a != make_folds(ids, 4, strata=strata, seed=12)


def test_folds_balance_strata():
    ids = [f"s{i}" for i in range(40)]
    strata = {s: "pos" if i < 10 else "neg" for i, s in enumerate(ids)}
    for f in make_folds(ids, 5, strata=strata, seed=0):
        assert sum(strata[s] == "pos" for s in f) == 2


def test_stratification_infeasible_names_class():
    ids = [f"s{i}" for i in range(10)]
    strata = {s: "rare" if i < 2 else "common" for i, s in enumerate(ids)}
    with pytest.raises(ValidationError, match="rare"):
        make_folds(ids, 5, strata=strata)


def test_holdout_fraction_and_groups():
    ids = [f"s{i}" for i in range(40)]
    groups = {s: f"P{i // 2}" for i, s in enumerate(ids)}
    train, val = holdout(ids, 0.1, groups, seed=0)
    assert len(val) == 4 and not set(train) & set(val)
    assert {groups[s] for s in train}.isdisjoint({groups[s] for s in val})


def _learnable(n=40, seed=0):
    rng = np.random.default_rng(seed)
    bags, y = [], {}
    for i in range(n):
        level = rng.uniform(-2, 2)
        v = 0.2 * rng.normal(size=(15, 3))
        v[:, 0] += level
        bags.append(EmbeddingBag(f"s{i}", f"P{i}", v))
        y[f"s{i}"] = level
    return pairwise_distances(bags, 1.0), y


def test_learnable_regression_matches_in_sample():
    D, y = _learnable()
    res = cross_validate(D, y, "svr", folds=5, grid=[{"C": 10.0, "epsilon": 0.01}])
    K = np.exp(-median_gamma(D) * D.values)
    target = np.array([y[i] for i in D.ids])
    in_sample = metric("svr", target, predict(fit_svr(K, target, 10.0, 0.01), K))
    assert abs(res.mean - in_sample) <= 0.05
    assert len(res.folds) == 5 and res.sd >= 0.0


def test_fold_local_gamma_and_partition():
    D, y = _learnable(25, seed=1)
    res = cross_validate(D, y, "svr", folds=5, grid=[{"C": 1.0, "epsilon": 0.1}], seed=4)
    seen = []
    for f in res.folds:
        seen += f.test_ids
        train = [i for i in D.ids if i not in f.test_ids]
        assert f.gamma == median_gamma(D.restrict(train))
    assert sorted(seen) == sorted(D.ids)


def test_cv_with_tuning_and_classification():
    D, y = _learnable(30, seed=2)
    labels = {k: 1 if v > 0 else 0 for k, v in y.items()}
    res = cross_validate(D, labels, "svc", folds=3, val_frac=0.25, seed=1)
    assert res.metric_name == "auc_roc"
    assert res.mean >= 0.9
    a = cross_validate(D, labels, "svc", folds=3, val_frac=0.25, seed=1)
    assert [f.params for f in a.folds] == [f.params for f in res.folds]
    assert [f.test_ids for f in a.folds] == [f.test_ids for f in res.folds]


def test_cv_survival_reports_logrank():
    D, y = _learnable(40, seed=3)
    rng = np.random.default_rng(0)
    labels = {k: SurvivalRecord(k, float(np.exp(-v) + 0.01), int(rng.uniform() < 0.8))
              for k, v in y.items()}
    res = cross_validate(D, labels, "survival", folds=4, seed=0)
    assert res.metric_name == "c_index" and res.mean > 0.8
    assert res.logrank_p is not None and 0.0 <= res.logrank_p <= 1.0


def test_threads_do_not_change_results():
    D, y = _learnable(25, seed=5)
    a = cross_validate(D, y, "svr", folds=3, val_frac=0.25, threads=1)
    b = cross_validate(D, y, "svr", folds=3, val_frac=0.25, threads=4)
    assert [f.params for f in a.folds] == [f.params for f in b.folds]
    for fa, fb in zip(a.folds, b.folds):
        assert fa.predictions.tobytes() == fb.predictions.tobytes()


# ------------------------------------------------------------------ tune

def test_tune_single_point():
    assert tune([{"C": 3.0}], lambda p: 42.0)[0] == {"C": 3.0}


def test_tune_tie_prefers_regularization():
    grid = [{"alpha": 0.01}, {"alpha": 0.1}, {"alpha": 0.05}]
    assert tune(grid, lambda p: 1.0)[0] == {"alpha": 0.1}
    grid = [{"C": 10.0}, {"C": 0.1}, {"C": 1.0}]
    assert tune(grid, lambda p: 1.0)[0] == {"C": 0.1}


def test_tune_skips_failures():
    def obj(p):
        if p["C"] > 1:
            raise BagKernelError("no")
        return p["C"]

    assert tune([{"C": 5.0}, {"C": 0.5}], obj)[0] == {"C": 0.5}
    with pytest.raises(BagKernelError, match="every"):
        tune([{"C": 5.0}], obj)


def test_alpha_grid_bounds():
    g = alpha_grid()
    assert len(g) == 13 and g[0] == pytest.approx(2.0 ** -12) and g[-1] == pytest.approx(0.125)


def test_tune_picks_middle_alpha_when_small_alpha_overfits():
    # fixed noisy instance: the weakest penalty ranks training pairs at least
    # as well but generalizes worse to the held-out patients
    rng = np.random.default_rng(10)
    X = rng.normal(size=(60, 1))
    t = np.exp(-X[:, 0] + 0.8 * rng.normal(size=60))
    K = np.exp(-2.0 * ((X[:, None] - X[None]) ** 2).sum(-1))
    tr, va = np.arange(40), np.arange(40, 60)
    rec_tr = [SurvivalRecord(str(i), t[i], 1) for i in tr]
    rec_va = [SurvivalRecord(str(i), t[i], 1) for i in va]

    def c_index(alpha, rows, recs):
        m = fit_survival(K[np.ix_(tr, tr)], rec_tr, alpha)
        return concordance_index(recs, predict(m, K[np.ix_(tr, rows)]))

    small, mid = 2.0 ** -12, 0.0625
    assert c_index(small, tr, rec_tr) >= c_index(mid, tr, rec_tr)
    assert c_index(small, va, rec_va) < c_index(mid, va, rec_va)
    grid = [{"alpha": a} for a in (small, mid, 0.125)]
    best, _ = tune(grid, lambda p: -c_index(p["alpha"], va, rec_va) + p["alpha"])
    assert best == {"alpha": 0.0625}


def test_cv_rejects_bad_input():
    D = DistanceMatrix(["a", "b"], [[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValidationError):
        cross_validate(D, {"a": 1.0, "b": 2.0}, "nope")
    with pytest.raises(ValidationError):
        cross_validate(np.eye(2), {"a": 1.0, "b": 2.0}, "svr")
