import numpy as np
import pytest

from bagkernel.bags import EmbeddingBag
from bagkernel.errors import MetaMismatchError, ValidationError
from bagkernel.explain import (
    QueryCache,
    extreme_patches,
    minmax_normalize,
    pam,
    patch_sensitivity,
    representative_patches,
    score_bag,
)
from bagkernel.machines import fit_svc, fit_svr
from bagkernel.mmd import PatchKernelParams, median_gamma, mmd_sq, pairwise_distances, to_kernel

from conftest import random_bags
from oracles import exhaustive_medoids


def test_minmax_examples():
    np.testing.assert_array_equal(minmax_normalize([0, 5, 10]), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(minmax_normalize([3, 3, 3]), [0.5, 0.5, 0.5])
    np.testing.assert_array_equal(minmax_normalize([-2, 0, 2]), [0.0, 0.5, 1.0])
    with pytest.raises(ValidationError):
        minmax_normalize([0.0, np.nan])
    with pytest.raises(ValidationError):
        minmax_normalize([])


def trained(rng, count=12, sigma=1.0, task="svr"):
    bags = random_bags(rng, count, d=3, n_range=(4, 10), shift=rng.normal(size=(count, 3)))
    D = pairwise_distances(bags, sigma)
    gamma = median_gamma(D)
    K = to_kernel(D, gamma)
    y = np.array([b.vectors[:, 0].mean() for b in bags])
    ids = [b.id for b in bags]
    if task == "svr":
        model = fit_svr(K.values, y, C=10.0, epsilon=0.01, train_ids=ids)
    else:
        model = fit_svc(K.values, np.where(y > np.median(y), 1, -1), C=10.0, train_ids=ids)
    return bags, model.with_meta(**K.meta()), gamma


@pytest.mark.parametrize("task", ["svr", "svc"])
def test_delta_equals_physical_removal(rng, task):
    bags, model, gamma = trained(rng, task=task)
    query = EmbeddingBag("q", "pq", rng.normal(size=(7, 3)))
    smap = patch_sensitivity(model, bags, query)
    assert smap.baseline == pytest.approx(score_bag(model, bags, query), abs=1e-12)
    for j in range(query.n):
        direct = score_bag(model, bags, query.without(j))
        assert smap.deltas[j] == pytest.approx(direct - smap.baseline, abs=1e-9)
    assert smap.normalized.min() == 0.0 and smap.normalized.max() == 1.0


def test_downdated_mmd_matches_recompute(rng):
    bags = random_bags(rng, 4, d=3)
    query = EmbeddingBag("q", "pq", rng.normal(size=(9, 3)))
    p = PatchKernelParams(1.0)
    down = QueryCache(query, bags, p).downdated_distances()
    for j in rng.choice(9, 5, replace=False):
        for t, b in enumerate(bags):
            assert down[j, t] == pytest.approx(mmd_sq(query.without(int(j)), b, p), abs=1e-9)


def test_identical_patches_equal_deltas(rng):
    bags, model, _ = trained(rng)
    query = EmbeddingBag("q", "pq", np.tile(rng.normal(size=(1, 3)), (6, 1)))
    smap = patch_sensitivity(model, bags, query)
    assert np.ptp(smap.deltas) <= 1e-10
    assert np.all(smap.normalized == 0.5)


def test_max_delta_moves_score_most(rng):
    bags, model, _ = trained(rng)
    for _ in range(5):
        query = EmbeddingBag("q", "pq", rng.normal(size=(8, 3)))
        smap = patch_sensitivity(model, bags, query)
        hi, lo = np.argmax(np.abs(smap.deltas)), np.argmin(np.abs(smap.deltas))
        base = score_bag(model, bags, query)
        assert abs(score_bag(model, bags, query.without(int(hi))) - base) >= \
            abs(score_bag(model, bags, query.without(int(lo))) - base)


def test_errors(rng):
    bags, model, gamma = trained(rng)
    with pytest.raises(ValidationError, match="one patch"):
        patch_sensitivity(model, bags, EmbeddingBag("q", "p", [[0.0, 0.0, 0.0]]))
    with pytest.raises(MetaMismatchError):
        patch_sensitivity(model, bags, EmbeddingBag("q", "p", np.zeros((3, 3))), gamma=2 * gamma)


def test_planted_signal_patches_rank_first():
    rng = np.random.default_rng(8)
    signal = np.array([4.0, 4.0, 0.0])

    def make(i, positive):
        v = rng.normal(size=(20, 3))
        if positive:
            v[:2] = signal + 0.2 * rng.normal(size=(2, 3))
        return EmbeddingBag(f"s{i}", f"p{i}", v)

    bags = [make(i, i % 2 == 0) for i in range(30)]
    y = np.array([1 if i % 2 == 0 else -1 for i in range(30)])
    D = pairwise_distances(bags, 1.0)
    K = to_kernel(D, median_gamma(D))
    model = fit_svc(K.values, y, C=10.0, train_ids=[b.id for b in bags]).with_meta(**K.meta())
    for i in range(3):
        query = make(100 + i, True)
        smap = patch_sensitivity(model, bags, query)
        top = set(np.argsort(-np.abs(smap.deltas))[:2].tolist())
        assert top == {0, 1}
        assert np.all(smap.deltas[:2] < 0)  # removing evidence lowers the positive score


def test_pam_matches_exhaustive(rng):
    pts = np.concatenate([rng.normal(0, 1, size=(7, 1)), rng.normal(20, 1, size=(6, 1))])
    res = pam(pts, 2)
    cost, combo = exhaustive_medoids(pts, 2)
    assert res.cost == pytest.approx(cost, abs=1e-12)
    assert sorted(res.medoids.tolist()) == sorted(combo)
    for _ in range(5):
        pts = rng.normal(size=(9, 2))
        assert pam(pts, 3).cost == pytest.approx(exhaustive_medoids(pts, 3)[0], rel=0.15)


def test_pam_history_nonincreasing(rng):
    res = pam(rng.normal(size=(60, 4)), 6)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_pam_all_points_and_duplicates(rng):
    pts = rng.normal(size=(5, 2))
    assert sorted(pam(pts, 5).medoids.tolist()) == [0, 1, 2, 3, 4]
    pts = rng.normal(size=(15, 2))
    single = pam(pts, 3)
    double = pam(np.concatenate([pts, pts]), 3)
    a = sorted(map(tuple, pts[single.medoids]))
    b = sorted(map(tuple, np.concatenate([pts, pts])[double.medoids]))
    assert a == b


def test_extreme_patches_and_medoids(rng):
    bags, model, _ = trained(rng)
    queries = [EmbeddingBag(f"q{i}", f"P{i // 2}", rng.normal(size=(5, 3))) for i in range(10)]
    entries = [(q, patch_sensitivity(model, bags, q)) for q in queries]
    high = extreme_patches(entries, "max")
    low = extreme_patches(entries, "min")
    assert [c.patient_id for c in high] == [f"P{i}" for i in range(5)]
    for c in high:
        smaps = [s for q, s in entries if q.patient_id == c.patient_id]
        assert c.score == max(s.deltas.max() for s in smaps)
    assert all(l.score <= h.score for l, h in zip(low, high))
    picked = representative_patches(high, 2)
    assert len(picked) == 2
    with pytest.raises(ValidationError):
        representative_patches(high, 6)


def test_extreme_draws_seeded():
    from bagkernel.explain import SensitivityMap

    bag = EmbeddingBag("b", "P", np.arange(12.0).reshape(4, 3))
    smap = SensitivityMap("b", np.array([1.0, 3.0, 3.0, 3.0]), np.zeros(4), 0.0)
    picks = {extreme_patches([(bag, smap)], "max", seed=s)[0].patch_index for s in range(20)}
    assert picks <= {1, 2, 3} and len(picks) > 1
    a = extreme_patches([(bag, smap)], "max", seed=4)[0]
    b = extreme_patches([(bag, smap)], "max", seed=4)[0]
    assert a.id == b.id
