import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plca import aggregation as agg
from plca import tensor as T
from plca.association import build_cycle_associations
from plca.losses import similarity_maximization_loss
from plca.similarity import cosine_entries
from plca.tensor import Tensor


def scalar_weights(f):
    """Softmax of row-standardized self-cosines, written out with loops."""
    c, n = f.shape
    w = np.zeros((n, n))
    for j in range(n):
        cos = [sum(f[k, j] * f[k, q] for k in range(c))
               / math.sqrt(sum(f[k, j] ** 2 for k in range(c)) + 1e-12)
               / math.sqrt(sum(f[k, q] ** 2 for k in range(c)) + 1e-12) for q in range(n)]
        mu = sum(cos) / n
        sd = math.sqrt(sum((v - mu) ** 2 for v in cos) / (n - 1)) if n > 1 else 0.0
        z = [(v - mu) / sd if sd > 1e-12 else 0.0 for v in cos]
        e = [math.exp(v - max(z)) for v in z]
        w[j] = [v / sum(e) for v in e]
    return w


def scalar_blend(x, w, alpha):
    m, n = x.shape
    return np.array([[(1 - alpha) * x[k, j] + alpha * sum(w[j, q] * x[k, q] for q in range(n))
                      for j in range(n)] for k in range(m)])


def test_single_pixel_weight_is_one():
    np.testing.assert_array_equal(agg.aggregation_weights(np.ones((3, 1))).w.data, [[1.0]])


def test_identical_features_give_uniform_rows():
    w = agg.aggregation_weights(np.tile([[1.0], [-2.0], [0.5]], (1, 5))).w.data
    np.testing.assert_allclose(w, np.full((5, 5), 0.2), atol=1e-15)


def test_three_pixel_weights_match_direct_evaluation(rng):
    f = rng.normal(size=(4, 3))
    np.testing.assert_allclose(agg.aggregation_weights(f).w.data, scalar_weights(f), atol=1e-12)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 9))
def test_weights_are_row_stochastic(seed, n):
    f = np.random.default_rng(seed).normal(size=(3, n)) * 5
    w = agg.aggregation_weights(f).w.data
    assert np.all(w > 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_alpha_zero_is_identity(rng):
    f = rng.normal(size=(2, 4))
    w = agg.aggregation_weights(f)
    np.testing.assert_array_equal(agg.spatial_aggregate_features(f, w, 0.0).data, f)
    p = rng.dirichlet(np.ones(3), size=4).T
    np.testing.assert_array_equal(agg.spatial_aggregate_probs(p, w, 0.0).data, p)


@given(alpha=st.floats(0, 1))
def test_shared_vector_is_a_fixed_point(alpha):
    f = np.tile([[0.3], [-1.2]], (1, 4))
    out = agg.spatial_aggregate_features(f, agg.aggregation_weights(f), alpha).data
    np.testing.assert_allclose(out, f, atol=1e-14)


def test_blend_matches_direct_evaluation_2x3(rng):
    f = rng.normal(size=(2, 3))
    w = agg.aggregation_weights(f).w.data
    out = agg.spatial_aggregate_features(f, agg.aggregation_weights(f), 0.5).data
    np.testing.assert_allclose(out, scalar_blend(f, w, 0.5), atol=1e-13)


def test_prob_blend_matches_direct_evaluation_and_stays_normalized(rng):
    f = rng.normal(size=(5, 6))
    p = rng.dirichlet(np.ones(4), size=6).T
    w = agg.aggregation_weights(f)
    out = agg.spatial_aggregate_probs(p, w, 0.5).data
    np.testing.assert_allclose(out, scalar_blend(p, w.w.data, 0.5), atol=1e-13)
    assert np.abs(out.sum(axis=0) - 1).max() < 1e-9


def test_identical_prob_columns_unchanged(rng):
    p = np.tile(rng.dirichlet(np.ones(3))[:, None], (1, 5))
    out = agg.spatial_aggregate_probs(p, agg.aggregation_weights(rng.normal(size=(2, 5))), 0.7).data
    np.testing.assert_allclose(out, p, atol=1e-15)


def test_errors():
    f = np.ones((2, 3))
    w = agg.aggregation_weights(f)
    with pytest.raises(ValueError):
        agg.spatial_aggregate_features(f, w, 1.5)
    with pytest.raises(T.ShapeError):
        agg.spatial_aggregate_features(np.ones((2, 4)), w)
    with pytest.raises(ValueError):
        agg.spatial_aggregate_probs(np.full((2, 3), 0.7), w)
    with pytest.raises(T.ShapeError):
        agg.aggregation_weights(np.ones(3))


def test_gradients_through_features_and_weights(rng):
    f0 = rng.normal(size=(3, 4))
    g = rng.normal(size=(3, 4))
    assert T.finite_diff_check(
        lambda f: T.tsum(agg.spatial_aggregate_features(f, agg.aggregation_weights(f)) * g), f0) < 1e-4
    z0 = rng.normal(size=(3, 4))
    assert T.finite_diff_check(lambda z: T.tsum(agg.spatial_aggregate_probs(
        T.softmax(z, axis=0), agg.aggregation_weights(f0)) * g), z0) < 1e-4


# ---------------------------------------------------------------------------
# gradient diffusion on a 3-pixel target


def diffusion_fixture():
    """One source pixel and three target pixels; the cycle selects target pixel 0."""
    f_s = np.array([[1.0], [0.2]])
    f_t = np.array([[0.9, -0.3, 0.1], [0.1, 1.0, -0.8]])
    return f_s, f_t, np.array([0])


def seed_loss_grad(use_sagg, alpha=0.5):
    """Gradient of a loss touching only the (aggregated) seed pixel j* w.r.t. raw target features."""
    f_s, f_t0, y = diffusion_fixture()
    f_t = Tensor(f_t0, requires_grad=True)
    f_hat = agg.spatial_aggregate_features(f_t, agg.aggregation_weights(f_t), alpha) if use_sagg else f_t
    d = cosine_entries(Tensor(f_s), f_hat).data
    a = build_cycle_associations(d, d.T, y)
    loss = similarity_maximization_loss(f_s, f_hat, a, "cosine")
    loss.backward()
    return a, f_t.grad


def test_fixture_selects_pixel_zero_both_ways():
    for use_sagg in (False, True):
        a, _ = seed_loss_grad(use_sagg)
        assert a.j_star.tolist() == [0] and a.valid_count == 1


def test_gradient_diffuses_only_with_aggregation():
    _, g_off = seed_loss_grad(False)
    _, g_on = seed_loss_grad(True)
    assert np.all(g_off[:, 1:] == 0.0)
    assert np.all(np.abs(g_on[:, 1:]).sum(axis=0) > 0)
