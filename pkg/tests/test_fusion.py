import numpy as np
import pytest

from bagkernel.errors import FormatError, ValidationError
from bagkernel.fusion import TopicProfiles, align, combine, read_topics, topic_kernel
from bagkernel.matrices import KernelMatrix
from bagkernel.mmd import check_psd


def random_psd(rng, ids, rank=None):
    n = len(ids)
    X = rng.normal(size=(n, rank or n))
    D = ((X[:, None] - X[None]) ** 2).sum(-1)
    return KernelMatrix(ids, np.exp(-D / max(D.mean(), 1.0)), 1.0)


def test_topic_kernel_values():
    t = np.zeros((3, 200), dtype=int)
    t[1, :7] = 1
    t[2] = t[0]
    K = topic_kernel(TopicProfiles(["a", "b", "c"], t))
    assert K.values[0, 2] == 1.0
    assert K.values[0, 1] == pytest.approx(np.exp(-7 / 200), abs=1e-15)
    assert np.array_equal(K.values, K.values.T)


def test_topic_non_binary_rejected():
    with pytest.raises(ValidationError):
        TopicProfiles(["a"], [[0, 2]])


def test_read_topics(tmp_path):
    p = tmp_path / "t.csv"
    header = "patient_id," + ",".join(f"t{i}" for i in range(200))
    rows = ["A," + ",".join("1" if i < 3 else "0" for i in range(200)),
            "B," + ",".join("0" for _ in range(200))]
    p.write_text("\n".join([header] + rows) + "\n")
    prof = read_topics(p)
    assert prof.patient_ids == ("A", "B") and prof.topics[0].sum() == 3
    p.write_text("patient_id,t0\nA,1\n")
    with pytest.raises(FormatError):
        read_topics(p)


def test_align_examples(rng):
    A = random_psd(rng, ["C", "A", "B"])
    B = random_psd(rng, ["B", "C", "D"])
    a, b = align([A, B])
    assert a.ids == b.ids == ("B", "C")
    assert a.values[0, 1] == A.values[2, 0]
    same = align([A, random_psd(rng, ["A", "B", "C"])])
    assert same[0].ids == ("A", "B", "C")
    with pytest.raises(ValidationError):
        align([A, random_psd(rng, ["X"])])


def test_align_then_combine_commutes(rng):
    A = random_psd(rng, ["a", "b", "c", "d"])
    B = random_psd(rng, ["d", "c", "b", "a", "e"])
    fused = combine(align([A, B]), "sum")
    pre = [K.restrict(["a", "b", "c", "d"]) for K in (A, B)]
    np.testing.assert_array_equal(fused.values, combine(pre, "sum").values)


def test_combine_examples():
    ones = KernelMatrix(["a", "b"], np.ones((2, 2)), 1.0)
    eye = KernelMatrix(["a", "b"], np.eye(2), 1.0)
    np.testing.assert_array_equal(combine([ones, ones], "sum").values, np.ones((2, 2)))
    K = KernelMatrix(["a", "b"], [[1.0, 0.3], [0.3, 1.0]], 1.0)
    np.testing.assert_array_equal(combine([K, eye], "product").values, np.eye(2))
    with pytest.raises(ValidationError, match="aligned"):
        combine([K, KernelMatrix(["b", "a"], np.eye(2), 1.0)], "sum")
    with pytest.raises(ValidationError):
        combine([K], "sum")
    with pytest.raises(ValidationError):
        combine([K, eye], "max")


def test_psd_closure(rng):
    ids = [f"s{i}" for i in range(15)]
    for _ in range(20):
        A, B = random_psd(rng, ids, 3), random_psd(rng, ids, 2)
        for mode in ("sum", "product"):
            assert check_psd(combine([A, B], mode), 1e-8 * 15).passed


@pytest.mark.parametrize("mode", ["sum", "product"])
def test_commutative_and_associative(rng, mode):
    ids = [f"s{i}" for i in range(8)]
    A, B, C = (random_psd(rng, ids) for _ in range(3))
    ab = combine([A, B], mode, rescale=False).values
    ba = combine([B, A], mode, rescale=False).values
    assert np.abs(ab - ba).max() <= 1e-15
    left = combine([combine([A, B], mode, rescale=False), C], mode, rescale=False).values
    right = combine([A, combine([B, C], mode, rescale=False)], mode, rescale=False).values
    assert np.abs(left - right).max() <= 1e-15


def test_sum_rescale_keeps_unit_diagonal(rng):
    ids = [f"s{i}" for i in range(6)]
    out = combine([random_psd(rng, ids) for _ in range(3)], "sum")
    np.testing.assert_allclose(np.diag(out.values), 1.0, atol=1e-15)
    assert out.values.max() <= 1.0 + 1e-15
