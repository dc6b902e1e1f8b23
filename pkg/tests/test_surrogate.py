import numpy as np
import pytest
from hypothesis import given, strategies as st

from cran_cache.model import all_mutual_information
from cran_cache.surrogate import (ConditioningError, compute_coefficients, eval_f, eval_h,
                                  expansion_coefficients, f_values, h_values,
                                  mcmb_coefficients)

from conftest import crandn


def test_scalar_coefficients():
    c = expansion_coefficients([[1.0]], [[[1.0]]], 0, 1.0, 0.0, 0.0, 1.0)
    assert c.U[0, 0].real == pytest.approx(0.5)
    assert c.Q[0, 0].real == pytest.approx(0.5)
    assert c.A[0, 0].real == pytest.approx(0.5)
    assert c.B[0, 0].real == pytest.approx(-1.0)
    assert c.b == pytest.approx(2.5 + np.log(0.5) - 1.0)
    assert c.b == pytest.approx(0.80685, abs=1e-5)
    assert eval_f(c, 0.0, 0.0, [[[1.0]]], 1.0, 0.0, 0.0) == pytest.approx(-np.log(2.0))


def test_scalar_delivery_coefficients():
    c = mcmb_coefficients([[1.0]], [[[1.0]]], 0, 1.0)
    assert c.A[0, 0].real == pytest.approx(0.5) and c.B[0, 0].real == pytest.approx(-1.0)
    # with a zero anchor the delivery constant equals the cache-side constant
    assert c.b == pytest.approx(0.80685, abs=1e-5)
    assert eval_h(c, [[[1.0]]]) == pytest.approx(-np.log(2.0))


def test_zero_beamformers_collapse(rng):
    H = crandn(rng, 2, 4)
    V = [np.zeros((4, 2)), np.zeros((4, 2))]
    c = expansion_coefficients(H, V, 1, 0.7, 0.3, 2.0, 10.0)
    assert np.allclose(c.U, 0) and np.allclose(c.Q, np.eye(2))
    assert np.allclose(c.A, 0) and np.allclose(c.B, 0)
    assert c.b == pytest.approx(0.5 * 2.3 ** 2)
    h = mcmb_coefficients(H, V, 1, 0.7)
    assert h.b == pytest.approx(0.0, abs=1e-14)
    assert eval_h(h, V) == pytest.approx(0.0, abs=1e-14)


def _instance(seed, G=2, K=4, N=2, M=4):
    rng = np.random.default_rng(seed)
    H = crandn(rng, 1, K, N, M)
    V = crandn(rng, 1, G, M, N)
    cluster_of = np.repeat(np.arange(G), K // G)
    return rng, H, V, cluster_of


@given(st.integers(0, 10_000))
def test_coefficient_structure(seed):
    _, H, V, cluster_of = _instance(seed)
    coef = compute_coefficients(H, V, cluster_of, np.full(4, 0.8))
    A = coef.A
    assert np.allclose(A, np.conj(np.swapaxes(A, -1, -2)), atol=1e-12)
    assert np.linalg.eigvalsh(A).min() >= -1e-10
    q = np.linalg.eigvalsh(coef.Q)
    assert q.min() > 0 and q.max() <= 1 + 1e-12


@given(st.integers(0, 10_000))
def test_tight_at_expansion_point(seed):
    rng, H, V, cluster_of = _instance(seed)
    sigma2 = np.full(4, 0.8)
    mi = all_mutual_information(H, V, cluster_of, sigma2)
    eta0, C0, F = rng.uniform(0, 1, (1, 4)), rng.uniform(0, 50, (1, 4)), np.full((1, 4), 100.0)
    coef = compute_coefficients(H, V, cluster_of, sigma2, anchor=eta0 + C0)
    f = f_values(coef, C0, eta0, V, F)
    assert np.allclose(f, (F - C0) * eta0 - mi, atol=1e-8)
    h = h_values(compute_coefficients(H, V, cluster_of, sigma2), V)
    assert np.allclose(h, -mi, atol=1e-8)


@given(st.integers(0, 10_000), st.floats(1e-3, 3.0))
def test_upper_bound_at_random_points(seed, scale):
    rng, H, V, cluster_of = _instance(seed)
    sigma2 = np.full(4, 0.8)
    eta0, C0, F = rng.uniform(0, 1, (1, 4)), rng.uniform(0, 50, (1, 4)), np.full((1, 4), 100.0)
    coef = compute_coefficients(H, V, cluster_of, sigma2, anchor=eta0 + C0)
    V1 = V + scale * crandn(rng, *V.shape)
    C1 = np.clip(C0 + 10 * scale * rng.standard_normal((1, 4)), 0, 100)
    e1 = eta0 + scale * rng.standard_normal((1, 4))
    lhs = (F - C1) * e1 - all_mutual_information(H, V1, cluster_of, sigma2)
    assert np.all(f_values(coef, C1, e1, V1, F) - lhs >= -1e-9)
    hfree = compute_coefficients(H, V, cluster_of, sigma2, interference=False)
    free_mi = all_mutual_information(H, V1, cluster_of, sigma2, interference=False)
    assert np.all(h_values(hfree, V1) + free_mi >= -1e-9)


def test_batched_and_single_pair_agree(rng):
    _, H, V, cluster_of = _instance(7)
    coef = compute_coefficients(H, V, cluster_of, np.full(4, 0.8), anchor=np.full((1, 4), 1.5))
    V1 = V + 0.3 * crandn(rng, *V.shape)
    batch = f_values(coef, np.full((1, 4), 1.0), np.full((1, 4), 0.5), V1, np.full((1, 4), 10.0))
    for k in range(4):
        pair = expansion_coefficients(H[0, k], list(V[0]), cluster_of[k], 0.8, 0.5, 1.0, 10.0)
        val = eval_f(pair, 1.0, 0.5, list(V1[0]), 10.0, 0.5, 1.0)
        assert val == pytest.approx(batch[0, k], rel=1e-10)


def test_interference_free_coefficients_ignore_other_clusters(rng):
    _, H, V, cluster_of = _instance(3)
    coef = compute_coefficients(H, V, cluster_of, np.ones(4), interference=False)
    V2 = V.copy()
    V2[0, 1] += crandn(rng, 4, 2)
    assert np.allclose(h_values(coef, V)[0, :2], h_values(coef, V2)[0, :2])


def test_corrupted_expansion_point_raises():
    H = np.zeros((1, 1, 2, 3), dtype=complex)
    H[0, 0, :, :2] = np.eye(2)
    V = np.zeros((1, 1, 3, 2), dtype=complex)
    V[0, 0, 0, 0], V[0, 0, 1, 1] = 1e8, 1e-1
    with pytest.raises(ConditioningError):
        compute_coefficients(H, V, [0], [1.0])
    with pytest.raises((ConditioningError, np.linalg.LinAlgError)):
        compute_coefficients(H * np.nan, V, [0], [1.0])
