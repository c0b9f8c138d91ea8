import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from plca import tensor as T
from plca.similarity import (COSINE, NEG_KL, SimMatrix, contrast_normalize_rows,
                             cosine_similarity_map, kl_similarity_map, normalize_rows)
from plca.tensor import Tensor


def cos(a, b):
    return cosine_similarity_map(np.array(a, float).reshape(-1, 1),
                                 np.array(b, float).reshape(-1, 1)).entries.item()


def test_cosine_examples():
    assert cos([3, 4], [3, 4]) == pytest.approx(1.0, abs=1e-12)
    assert cos([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert cos([1, 1], [1, 0]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_cosine_channel_mismatch():
    with pytest.raises(T.ShapeError):
        cosine_similarity_map(np.ones((3, 2)), np.ones((4, 2)))


def test_cosine_entries_bounded(rng):
    s = cosine_similarity_map(rng.normal(size=(5, 7)), rng.normal(size=(5, 4)))
    assert s.shape == (7, 4) and s.kind == COSINE and not s.normalized
    assert np.all(np.abs(s.entries.data) <= 1 + 1e-12)


@given(scale=st.floats(0.1, 1e3), col=st.integers(0, 5))
def test_cosine_invariant_to_positive_rescaling(scale, col):
    rng = np.random.default_rng(7)
    f, g = rng.normal(size=(4, 6)), rng.normal(size=(4, 5))
    before = cosine_similarity_map(f, g).entries.data
    f2 = f.copy()
    f2[:, col] *= scale
    after = cosine_similarity_map(f2, g).entries.data
    np.testing.assert_allclose(after, before, atol=1e-12)


def kl(p, q):
    return kl_similarity_map(np.array(p, float).reshape(-1, 1),
                             np.array(q, float).reshape(-1, 1)).entries.item()


def test_kl_examples():
    assert kl([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-12)
    assert kl([0.5, 0.5], [0.9, 0.1]) == pytest.approx(-0.5108, abs=1e-4)
    assert kl([0.9, 0.1], [0.5, 0.5]) == pytest.approx(-0.3681, abs=1e-4)


def test_kl_matches_direct_formula(rng):
    p = rng.dirichlet(np.ones(4), size=3).T
    q = rng.dirichlet(np.ones(4), size=5).T
    s = kl_similarity_map(p, q)
    expect = np.array([[-(p[:, i] * np.log(p[:, i] / q[:, j])).sum() for j in range(5)]
                       for i in range(3)])
    np.testing.assert_allclose(s.entries.data, expect, atol=1e-10)
    assert s.kind == NEG_KL and np.all(s.entries.data <= 1e-12)


def test_kl_argmax_finds_identical_column(rng):
    q = rng.dirichlet(np.ones(4), size=6).T
    p = q[:, [4, 1, 2]]
    d = kl_similarity_map(p, q).entries.data
    assert d.argmax(axis=1).tolist() == [4, 1, 2]


def test_kl_rejects_non_distributions():
    with pytest.raises(ValueError):
        kl_similarity_map(np.array([[0.5], [0.6]]), np.array([[0.5], [0.5]]))
    with pytest.raises(ValueError):
        kl_similarity_map(np.array([[1.2], [-0.2]]), np.array([[0.5], [0.5]]))


def norm_rows(rows):
    return contrast_normalize_rows(SimMatrix(Tensor(np.atleast_2d(np.array(rows, float))))).entries.data


def test_normalize_examples():
    np.testing.assert_allclose(norm_rows([1, 2, 3]), [[-1, 0, 1]], atol=1e-15)
    np.testing.assert_array_equal(norm_rows([2.5, 2.5, 2.5]), [[0, 0, 0]])
    np.testing.assert_array_equal(norm_rows([[4.0]]), [[0.0]])


def test_double_normalization_is_an_error():
    s = contrast_normalize_rows(SimMatrix(Tensor(np.eye(3))))
    with pytest.raises(ValueError):
        contrast_normalize_rows(s)


rows_strategy = hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 9)),
                           elements=st.floats(-1, 1))


@given(rows_strategy)
def test_normalized_rows_are_standardized(d):
    out = normalize_rows(Tensor(d)).data
    sd = d.std(axis=1, ddof=1)
    for k in range(d.shape[0]):
        if sd[k] > 1e-6:
            assert abs(out[k].mean()) < 1e-9
            assert abs(out[k].std(ddof=1) - 1) < 1e-9
        elif sd[k] == 0:
            assert not out[k].any()


@given(rows_strategy, st.floats(0.01, 50), st.floats(-5, 5))
def test_normalization_invariant_to_row_affine_maps(d, a, b):
    sd = d.std(axis=1, ddof=1)
    d = d[sd > 1e-3]
    if d.size == 0:
        return
    np.testing.assert_allclose(normalize_rows(Tensor(a * d + b)).data, normalize_rows(Tensor(d)).data,
                               atol=1e-9)


def test_similarity_gradients(rng):
    f, g = rng.normal(size=(3, 4)), rng.normal(size=(3, 5))
    w = rng.normal(size=(4, 5))
    assert T.finite_diff_check(lambda x: T.tsum(cosine_similarity_map(x, g).entries * w), f) < 1e-4
    assert T.finite_diff_check(lambda x: T.tsum(cosine_similarity_map(f, x).entries * w), g) < 1e-4
    zp, zq = rng.normal(size=(4, 4)), rng.normal(size=(4, 5))
    sm = lambda z: T.softmax(z, axis=0)  # noqa: E731
    q = sm(Tensor(zq)).data
    assert T.finite_diff_check(lambda z: T.tsum(kl_similarity_map(sm(z), q).entries * w), zp) < 1e-4
    p = sm(Tensor(zp)).data
    assert T.finite_diff_check(lambda z: T.tsum(kl_similarity_map(p, sm(z)).entries * w), zq) < 1e-4
