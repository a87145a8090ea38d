import numpy as np
import pytest

from bagkernel.errors import ConvergenceError, DimensionMismatchError, MetaMismatchError, ValidationError
from bagkernel.machines import (
    DualModel,
    fit_svc,
    fit_svr,
    load_model,
    predict,
    predict_from_kernel,
    save_model,
)
from bagkernel.analysis.stats import auc_roc
from bagkernel.matrices import KernelMatrix

from oracles import svc_oracle, svr_objective, svr_oracle


def rbf_kernel(rng, n, d=3, gamma=0.5):
    X = rng.normal(size=(n, d))
    D = ((X[:, None] - X[None]) ** 2).sum(-1)
    return np.exp(-gamma * D), X


def test_svr_two_points():
    m = fit_svr(np.eye(2), [1.0, -1.0], C=10, epsilon=0.0)
    np.testing.assert_allclose(m.coefficients, [1.0, -1.0], atol=1e-6)
    assert abs(m.bias) < 1e-6
    np.testing.assert_allclose(predict(m, np.eye(2)), [1.0, -1.0], atol=1e-6)


def test_svr_two_points_grid_oracle():
    # enumerate the 2-variable dual (beta, -beta) on a grid: equality forces beta2 = -beta1
    grid = np.linspace(-10, 10, 200_001)
    K = np.eye(2)
    y = np.array([1.0, -1.0])
    vals = [svr_objective(K, y, 0.0, np.array([b, -b])) for b in grid[::100]]
    coarse = grid[::100][int(np.argmin(vals))]
    fine = grid[np.abs(grid - coarse) <= 0.01]
    best = fine[int(np.argmin([svr_objective(K, y, 0.0, np.array([b, -b])) for b in fine]))]
    m = fit_svr(K, y, C=10, epsilon=0.0)
    assert m.coefficients[0] == pytest.approx(best, abs=1e-4)


def test_svr_constant_target(rng):
    K, _ = rbf_kernel(rng, 7)
    m = fit_svr(K, np.full(7, 3.5), C=1.0, epsilon=0.1)
    assert np.all(m.coefficients == 0.0)
    assert m.bias == pytest.approx(3.5, abs=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_svr_matches_qp_oracle(seed):
    rng = np.random.default_rng(seed)
    K, X = rbf_kernel(rng, 8)
    y = X[:, 0] + 0.3 * rng.normal(size=8)
    m = fit_svr(K, y, C=1.0, epsilon=0.1)
    beta, obj = svr_oracle(K, y, 1.0, 0.1)
    mine = svr_objective(K, y, 0.1, m.coefficients)
    assert mine == pytest.approx(obj, abs=1e-5)


def test_svc_two_points():
    m = fit_svc(np.eye(2), [1, -1], C=10)
    np.testing.assert_allclose(m.coefficients, [1.0, -1.0], atol=1e-6)
    assert abs(m.bias) < 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_svc_matches_qp_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    K, X = rbf_kernel(rng, 8)
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=8) > 0, 1.0, -1.0)
    if len(set(y)) < 2:
        y[0] = -y[0]
    m, res = fit_svc(K, y, C=2.0, track=True)
    _, obj = svc_oracle(K, y, 2.0)
    assert res.objective == pytest.approx(obj, abs=1e-5)


def _duplicated_scores(K, y, cross, C, C_dup):
    m1 = fit_svc(K, y, C=C, tol=1e-9)
    m2 = fit_svc(np.block([[K, K], [K, K]]), np.concatenate([y, y]), C=C_dup, tol=1e-9)
    return m1, predict(m1, cross), predict(m2, np.vstack([cross, cross]))


def test_svc_duplication_invariance_separable(rng):
    # no multiplier at its bound: each copy takes half the weight
    X = np.concatenate([rng.normal(size=(6, 3)) - 2, rng.normal(size=(6, 3)) + 2])
    y = np.repeat([-1.0, 1.0], 6)
    Xq = rng.normal(size=(4, 3))
    K = np.exp(-0.1 * ((X[:, None] - X[None]) ** 2).sum(-1))
    cross = np.exp(-0.1 * ((X[:, None] - Xq[None]) ** 2).sum(-1))
    m1, s1, s2 = _duplicated_scores(K, y, cross, 100.0, 100.0)
    assert np.all(np.abs(m1.coefficients) < 100.0 - 1e-6)
    np.testing.assert_allclose(s1, s2, atol=1e-6)


def test_svc_duplication_with_bounded_multipliers(rng):
    # doubling the data doubles the total slack penalty, so C halves to match
    K, X = rbf_kernel(rng, 10)
    y = np.where(X[:, 1] > 0, 1.0, -1.0)
    y[:2] = [1.0, -1.0]
    Xq = rng.normal(size=(4, 3))
    cross = np.exp(-0.5 * ((X[:, None] - Xq[None]) ** 2).sum(-1))
    _, s1, s2 = _duplicated_scores(K, y, cross, 1.0, 0.5)
    np.testing.assert_allclose(s1, s2, atol=1e-6)
    _, oracle_obj = svc_oracle(np.block([[K, K], [K, K]]), np.concatenate([y, y]), 0.5)
    _, res = fit_svc(np.block([[K, K], [K, K]]), np.concatenate([y, y]), C=0.5, track=True)
    assert res.objective == pytest.approx(oracle_obj, abs=1e-5)


def test_svc_separable_training_auc(rng):
    X = np.concatenate([rng.normal(size=(10, 2)) - 3, rng.normal(size=(10, 2)) + 3])
    y = np.repeat([-1.0, 1.0], 10)
    K = np.exp(-0.1 * ((X[:, None] - X[None]) ** 2).sum(-1))
    m = fit_svc(K, y, C=10)
    assert auc_roc(y > 0, predict(m, K)).auc == 1.0


def test_svc_single_class():
    with pytest.raises(ValidationError, match="both classes"):
        fit_svc(np.eye(3), [1, 1, 1])


def test_non_square_kernel():
    with pytest.raises(DimensionMismatchError):
        fit_svr(np.ones((2, 3)), [1.0, 2.0])


def test_iteration_cap_reports_gap(rng):
    K, X = rbf_kernel(rng, 30)
    with pytest.raises(ConvergenceError) as info:
        fit_svr(K, X[:, 0], C=10, epsilon=0.0, max_iter=2)
    assert info.value.gap > 1e-6


@pytest.mark.parametrize("task", ["svr", "svc"])
def test_feasibility_on_random_instances(task):
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(3, 15))
        K, X = rbf_kernel(rng, n, gamma=float(rng.uniform(0.1, 2)))
        C = float(rng.choice([0.1, 1.0, 10.0]))
        if task == "svr":
            m = fit_svr(K, X[:, 0] + rng.normal(size=n), C=C, epsilon=0.05)
            assert np.all(np.abs(m.coefficients) <= C + 1e-8)
        else:
            y = np.where(rng.normal(size=n) > 0, 1.0, -1.0)
            y[:2] = [1.0, -1.0]
            m = fit_svc(K, y, C=C)
            assert np.all(np.abs(m.coefficients) <= C + 1e-8)
            assert np.all(m.coefficients * y >= -1e-8)
        assert abs(m.coefficients.sum()) <= 1e-8


@pytest.mark.parametrize("task", ["svr", "svc"])
def test_objective_nonincreasing(rng, task):
    K, X = rbf_kernel(rng, 25)
    if task == "svr":
        _, res = fit_svr(K, X[:, 0], C=5.0, epsilon=0.05, track=True)
    else:
        _, res = fit_svc(K, np.where(X[:, 0] > 0, 1.0, -1.0), C=5.0, track=True)
    h = np.array(res.history)
    assert len(h) > 2
    assert np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, np.abs(h[:-1])))


def test_prediction_consistency_svr(rng):
    K, X = rbf_kernel(rng, 20)
    y = X[:, 0]
    m, res = fit_svr(K, y, C=1.0, epsilon=0.1, track=True)
    internal = res.gradient[:20] - 0.1 + y + m.bias
    np.testing.assert_allclose(predict(m, K), internal, atol=1e-10)


def test_prediction_consistency_svc(rng):
    K, X = rbf_kernel(rng, 20)
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    m, res = fit_svc(K, y, C=1.0, track=True)
    internal = y * (res.gradient + 1.0) + m.bias
    np.testing.assert_allclose(predict(m, K), internal, atol=1e-10)


def test_predict_examples(rng):
    Kc = rng.uniform(size=(3, 5))
    m = DualModel("svr", ["a", "b", "c"], np.zeros(3), 2.5)
    assert np.all(predict(m, Kc) == 2.5)
    m = DualModel("survival", ["a", "b", "c"], [0.0, 1.7, 0.0])
    np.testing.assert_allclose(predict(m, Kc), 1.7 * Kc[1], rtol=0, atol=0)
    coef = rng.normal(size=3)
    m = DualModel("svc", ["a", "b", "c"], coef, -0.3)
    naive = [sum(coef[i] * Kc[i, q] for i in range(3)) - 0.3 for q in range(5)]
    np.testing.assert_allclose(predict(m, Kc), naive, atol=1e-12)
    with pytest.raises(DimensionMismatchError):
        predict(m, np.ones((4, 2)))


def test_model_round_trip_and_meta_guard(tmp_path, rng):
    K, X = rbf_kernel(rng, 6)
    ids = [f"s{i}" for i in range(6)]
    m = fit_svr(K, X[:, 0], train_ids=ids).with_meta(sigma=10.0, gamma=0.5, estimator="biased")
    save_model(tmp_path / "m.json", m)
    back = load_model(tmp_path / "m.json")
    assert back.coefficients.tobytes() == m.coefficients.tobytes()
    assert back.bias == m.bias and back.train_ids == m.train_ids
    km = KernelMatrix(ids, K, 0.5, sigma=10.0, estimator="biased")
    np.testing.assert_array_equal(predict_from_kernel(back, km, ids), predict(m, K))
    wrong = KernelMatrix(ids, K, 0.25, sigma=10.0, estimator="biased")
    with pytest.raises(MetaMismatchError, match="gamma"):
        predict_from_kernel(back, wrong, ids)
