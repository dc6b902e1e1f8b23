import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cran_cache.dual import (CachePrimal, DualState, NonConvergenceError, _solve_beamformers, dual_gradient,
                             dual_objective, lagrangian, momentum_step, next_theta,
                             projected_step, recover_primal, solve_subproblem, write_trace)
from cran_cache.verify import fd_gradient, prop2_subproblem


def one(lam, delta=0.0, mu=0.0):
    return DualState(np.array([[delta]]), np.array([[lam]]), mu)


def test_projected_step_examples():
    assert projected_step(one(1.0), one(-2.0), 1.0).lam[0, 0] == 0.0
    assert projected_step(one(1.0), one(0.5), 1.0).lam[0, 0] == 1.5
    assert projected_step(one(0.0, mu=0.0), one(0.0, mu=-3.0), 1.0).mu == 0.0


def test_theta_recursion():
    assert next_theta(1.0) == pytest.approx((1 + math.sqrt(5)) / 2, rel=1e-15)
    assert next_theta(next_theta(1.0)) == pytest.approx(2.19353, abs=1e-5)


def test_first_momentum_step_is_a_projected_step():
    dual = DualState(np.array([[0.5]]), np.array([[1.0, 0.2]]), 0.3)
    grad = DualState(np.array([[-1.0]]), np.array([[0.4, -0.5]]), 0.1)
    a = momentum_step(dual, grad, 0.7)
    b = projected_step(dual, grad, 0.7)
    assert np.array_equal(a.flat(), b.flat()) and a.s == 1


@given(st.integers(0, 10_000))
def test_momentum_iterates_stay_nonnegative(seed):
    rng = np.random.default_rng(seed)
    dual = DualState(rng.uniform(0, 1, (2, 1)), rng.uniform(0, 1, (2, 3)), 0.5)
    for _ in range(5):
        grad = DualState(rng.standard_normal((2, 1)), rng.standard_normal((2, 3)), rng.standard_normal())
        dual = momentum_step(dual, grad, 0.9)
        assert dual.is_nonnegative() and dual.tilde.is_nonnegative()


def test_zero_multipliers_recover_the_prox_center():
    sub = prop2_subproblem(0)
    S, P, K = sub.shape
    p = recover_primal(DualState(np.zeros((S, P)), np.zeros((S, K)), 0.0), sub)
    assert np.array_equal(p.V, sub.V0)
    assert np.allclose(p.eta, sub.eta0 + sub.F_sg / sub.rho1)
    assert np.allclose(p.C, np.clip(sub.C0, 0, sub.cache_cap))


def test_large_cache_multiplier_empties_caches():
    sub = prop2_subproblem(1)
    S, P, K = sub.shape
    mu = float(sub.rho3 * (sub.C0.max() + 1))
    p = recover_primal(DualState(np.zeros((S, P)), np.zeros((S, K)), mu), sub)
    assert np.all(p.C == 0.0)


def test_shared_factorization_matches_separate_solves():
    sub = prop2_subproblem(2)
    rng = np.random.default_rng(0)
    lam = rng.uniform(0, 2, (2, 4))
    delta_g = np.repeat(rng.uniform(0, 1, (2, 1)), 2, axis=1)
    a = _solve_beamformers(sub.coef, lam, delta_g, sub.E, sub.V0, sub.rho2, shared=True)
    b = _solve_beamformers(sub.coef, lam, delta_g, sub.E, sub.V0, sub.rho2, shared=False)
    assert np.allclose(a, b, atol=1e-12)


def test_dual_gradient_matches_finite_differences():
    sub = prop2_subproblem(3)
    rng = np.random.default_rng(3)
    S, P, K = sub.shape
    dual = DualState(rng.uniform(0.2, 1, (S, P)), rng.uniform(0.2, 1, (S, K)), 0.7)
    grad = dual_gradient(recover_primal(dual, sub), sub).flat()

    def D(x):
        d = DualState(x[:S * P].reshape(S, P), x[S * P:-1].reshape(S, K), float(x[-1]))
        return dual_objective(d, sub)

    fd = fd_gradient(D, dual.flat(), step=1e-6)
    assert np.max(np.abs(fd - grad)) <= 1e-4 * np.max(np.abs(grad))


def test_recovered_primal_minimizes_the_lagrangian():
    sub = prop2_subproblem(4)
    rng = np.random.default_rng(4)
    S, P, K = sub.shape
    dual = DualState(rng.uniform(0, 1, (S, P)), rng.uniform(0, 1, (S, K)), 0.5)
    p = recover_primal(dual, sub)
    base = lagrangian(p, dual, sub)
    for field in ("C", "eta", "V"):
        arr = getattr(p, field)
        for idx in [0, arr.size // 2, arr.size - 1]:
            for step in (1e-3, -1e-3):
                moved = np.array(arr).reshape(-1)
                moved[idx] += step
                if field == "C" and not 0 <= moved[idx] <= sub.cache_cap[idx]:
                    continue
                parts = {"C": p.C, "eta": p.eta, "V": p.V, field: moved.reshape(arr.shape)}
                assert lagrangian(CachePrimal(**parts), dual, sub) > base


def test_plain_ascent_is_monotone_and_matches_accelerated():
    sub = prop2_subproblem(5)
    plain = solve_subproblem(sub, mode="plain", tol=1e-10, backtracking=True, max_iter=200_000)
    fast = solve_subproblem(sub, mode="accelerated", tol=1e-10, backtracking=True,
                            max_iter=200_000)
    assert np.all(np.diff(plain.history) >= -1e-8)
    assert fast.dual_objective == pytest.approx(plain.dual_objective, rel=1e-4)
    assert fast.iterations < plain.iterations


def test_zero_momentum_reproduces_plain_iterates():
    sub = prop2_subproblem(6)
    plain = solve_subproblem(sub, mode="plain", tol=1e-8, backtracking=True)
    flat = solve_subproblem(sub, mode="accelerated", tol=1e-8, backtracking=True, momentum=False)
    assert plain.history == flat.history
    assert np.array_equal(plain.dual.flat(), flat.dual.flat())


def test_complementary_slackness_at_convergence():
    sub = prop2_subproblem(7)
    sol = solve_subproblem(sub, tol=1e-12, backtracking=True, max_iter=200_000)
    res = dual_gradient(sol.primal, sub)
    assert np.max(np.abs(sol.dual.flat() * res.flat())) < 1e-4


def test_slack_budgets_release_their_multipliers():
    sub = prop2_subproblem(8)
    sub.C_tot = 1e6
    sub.P_tot = 1e6
    sol = solve_subproblem(sub, tol=1e-12, backtracking=True, max_iter=200_000)
    assert sol.dual.mu == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(sol.dual.delta, 0.0, atol=1e-8)


def test_iteration_cap_reports_last_state():
    sub = prop2_subproblem(9)
    with pytest.raises(NonConvergenceError) as info:
        solve_subproblem(sub, tol=1e-15, max_iter=3)
    assert info.value.solution.iterations == 3
    sol = solve_subproblem(sub, tol=1e-15, max_iter=3, raise_on_cap=False)
    assert not sol.converged


def test_unknown_mode():
    with pytest.raises(ValueError):
        solve_subproblem(prop2_subproblem(0), mode="newton")


def test_trace_csv(tmp_path):
    rows = []
    solve_subproblem(prop2_subproblem(0), tol=1e-6, backtracking=True, trace=rows)
    path = tmp_path / "t.csv"
    write_trace(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "s,D,max_violation,theta" and len(lines) == len(rows) + 1


def test_warm_start_from_the_optimum_stops_at_once():
    sub = prop2_subproblem(10)
    cold = solve_subproblem(sub, tol=1e-10, backtracking=True, max_iter=200_000)
    warm = solve_subproblem(sub, tol=1e-10, backtracking=True, max_iter=200_000,
                            initial=cold.dual)
    assert warm.iterations < cold.iterations / 10
    assert warm.dual_objective == pytest.approx(cold.dual_objective, rel=1e-9)
    assert np.all(warm.dual.lam >= 0)
