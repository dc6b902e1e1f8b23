import numpy as np
import pytest
from hypothesis import given, strategies as st

from cran_cache.verify import (Instance, brute_force_cache, check_convexity, check_prop1,
                               check_prop2, fd_gradient, random_instance)


def test_fd_gradient_examples():
    assert fd_gradient(lambda x: x ** 2, 3.0) == pytest.approx(6.0, abs=1e-9)
    assert np.all(fd_gradient(lambda x: 4.0, np.ones(3)) == 0.0)
    assert fd_gradient(lambda x: np.log1p(x ** 2), 1.0) == pytest.approx(1.0, abs=1e-8)


def test_fd_gradient_splits_complex_coordinates():
    z0 = np.array([1.0 + 2.0j, -0.5j])
    g = fd_gradient(lambda z: float(np.sum(np.abs(z) ** 2)), z0)
    assert np.allclose(g, 2 * z0, atol=1e-8)


def test_fd_gradient_second_order():
    f = lambda x: float(np.sin(3 * x))
    steps = np.array([1e-3, 1e-4, 1e-5])
    err = [abs(fd_gradient(f, 0.4, h) - 3 * np.cos(1.2)) for h in steps]
    order = np.polyfit(np.log(steps), np.log(err), 1)[0]
    assert order >= 1.8


def test_fd_gradient_names_bad_coordinate():
    f = lambda x: float(x[0]) if x[1] >= 0 else float("inf")
    with pytest.raises(FloatingPointError, match="coordinate 1"):
        fd_gradient(f, np.array([1.0, 0.0]))


def test_prop1_scalar_instance():
    inst = Instance(np.ones((1, 1, 1), dtype=complex), np.array([0]), np.array([1.0]),
                    np.array([1.0]), 1, 1)
    assert check_prop1(inst, 200, seed=0).passed


@given(st.integers(0, 1000))
def test_prop1_random_instances(seed):
    assert check_prop1(random_instance(seed), 40, seed=seed).passed


def test_prop1_catches_corrupted_constant():
    res = check_prop1(random_instance(0), 100, seed=0, corrupt_b=0.1)
    assert not res.passed and res.max_abs == pytest.approx(0.1, rel=1e-6)


def test_delivery_bound_and_convexity():
    assert check_prop1(random_instance(1), 100, seed=1, cache_side=False).passed
    assert check_convexity(random_instance(2), n_segments=50, seed=2).passed


def test_prop2_oracle():
    assert check_prop2(5, seed=11).passed
    zero = check_prop2(2, seed=12, zero_duals=True)
    assert zero.passed and zero.max_abs < 1e-10


def test_prop2_refuses_zero_prox():
    res = check_prop2(3, seed=0, rho=(1.0, 1.0, 0.0))
    assert not res.passed and res.samples == 0 and "invalid" in res.note


def test_brute_force_single_bs():
    mi = np.array([[0.7], [1.1]])
    C, best, _, _ = brute_force_cache(mi, [100.0], [[0]], 50.0)
    assert C[0] == pytest.approx(50.0)
    C, best, _, _ = brute_force_cache(mi, [100.0], [[0]], 150.0)
    assert C[0] == pytest.approx(100.0) and np.isinf(best)


def test_brute_force_symmetric_pair():
    C, _, h, _ = brute_force_cache(np.array([[1.0, 1.0]]), [100.0, 100.0], [[0, 1]], 60.0)
    assert np.allclose(C, [30.0, 30.0])


def test_brute_force_weak_bs_gets_more():
    C, _, _, _ = brute_force_cache(np.array([[2.0, 0.5]]), [100.0, 100.0], [[0, 1]], 60.0)
    assert C[1] > C[0]


def test_brute_force_refuses_large_instances():
    with pytest.raises(ValueError, match="K <= 3"):
        brute_force_cache(np.ones((1, 4)), [1.0] * 4, [[0, 1, 2, 3]], 1.0)
