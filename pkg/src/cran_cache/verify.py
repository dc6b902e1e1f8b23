"""Independent numerical oracles for the surrogate bounds and the dual closed forms.

The oracles reuse only the rate model (``model``) and treat surrogate
coefficients as input data. The Lagrangian minimizer is found by plain
projected gradient descent written here from scratch, so it does not share
code with the closed-form recovery it checks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import all_mutual_information


@dataclass
class OracleResult:
    name: str
    max_abs: float
    max_rel: float
    passed: bool
    samples: int
    seed: int
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28} abs={self.max_abs:.3e} rel={self.max_rel:.3e} "
                f"n={self.samples} seed={self.seed} {self.note}").rstrip()


def fd_gradient(func, point, step=1e-5):
    """Central-difference gradient; complex entries get d/dRe + 1j d/dIm."""
    x = np.array(point, dtype=complex if np.iscomplexobj(point) else float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    parts = (1.0, 1j) if np.iscomplexobj(x) else (1.0,)
    for i in range(flat.size):
        for unit in parts:
            old = flat[i]
            flat[i] = old + step * unit
            up = func(x[0] if scalar else x)
            flat[i] = old - step * unit
            down = func(x[0] if scalar else x)
            flat[i] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                part = "imag" if unit == 1j else "real"
                raise FloatingPointError(f"non-finite function value at coordinate {i} ({part})")
            g[i] += unit * (up - down) / (2.0 * step)
    if not np.iscomplexobj(point):
        grad = grad.real if np.iscomplexobj(grad) else grad
    return grad[0] if scalar else grad


# Random instances --------------------------------------------------------------

@dataclass
class Instance:
    H: np.ndarray           # (K, N, M)
    cluster_of: np.ndarray
    sigma2: np.ndarray
    F: np.ndarray           # (K,) file size seen by each BS
    G: int
    d: int


def random_instance(seed, G=2, per_cluster=2, N=2, M=4, scale=1.0, sigma2=1.0) -> Instance:
    rng = np.random.default_rng(seed)
    K = G * per_cluster
    H = scale * (rng.standard_normal((K, N, M)) + 1j * rng.standard_normal((K, N, M))) / np.sqrt(2)
    return Instance(H, np.repeat(np.arange(G), per_cluster), np.full(K, sigma2),
                    np.full(K, 100.0), G, min(N, M))


def desk_instance(seed) -> Instance:
    """One draw of the desk geometry with the real link budget."""
    from .channels import sample_channels
    from .config import desk_config
    cfg, exp = desk_config()
    ch = sample_channels(cfg, exp.distances, exp.antenna_gain_db, seed, T=1)
    return Instance(ch.H[0], np.asarray(cfg.cluster_of), np.asarray(cfg.sigma2),
                    np.asarray(cfg.F_of_bs()), cfg.G, cfg.d)


def _random_V(rng, G, M, d, power):
    V = rng.standard_normal((G, M, d)) + 1j * rng.standard_normal((G, M, d))
    return V * np.sqrt(power / np.sum(np.abs(V) ** 2))


def _mi(inst, V, k):
    """MI of BS k for one or many beamformer sets V (..., G, M, d)."""
    V = np.asarray(V)
    batch = V.reshape((-1,) + V.shape[-3:])
    H = np.broadcast_to(inst.H[None, k:k + 1], (batch.shape[0], 1) + inst.H.shape[1:])
    mi = all_mutual_information(H, batch, inst.cluster_of[k:k + 1], inst.sigma2[k:k + 1])
    return mi[:, 0].reshape(V.shape[:-3])


# Surrogate bound checks ---------------------------------------------------------

def check_prop1(inst: Instance, n_samples=1000, seed=0, power=None, corrupt_b=0.0,
                cache_side=True, name=None) -> OracleResult:
    """Upper bound, tightness and gradient match of the rate-constraint surrogate.

    For every BS a random expansion point is drawn; ``n_samples`` probes
    around it test the bound, and central differences of the exact left-hand
    side test the gradient. ``cache_side=False`` checks the delivery variant
    (no C, eta terms). ``corrupt_b`` shifts the constant as a negative control.
    """
    from .surrogate import expansion_coefficients, mcmb_coefficients

    rng = np.random.default_rng(seed)
    K = len(inst.cluster_of)
    M = inst.H.shape[-1]
    power = power if power is not None else 10.0 * inst.sigma2.mean() / np.mean(np.abs(inst.H) ** 2)
    worst_margin = np.inf
    worst_eq = 0.0
    worst_grad = 0.0
    for k in range(K):
        g_k = int(inst.cluster_of[k])
        F = float(inst.F[k])
        V0 = _random_V(rng, inst.G, M, inst.d, power)
        C0 = float(rng.uniform(0, 0.9 * F))
        eta0 = float(rng.uniform(0, 0.2))
        if cache_side:
            coef = expansion_coefficients(inst.H[k], list(V0), g_k, inst.sigma2[k], eta0, C0, F)
        else:
            coef = mcmb_coefficients(inst.H[k], list(V0), g_k, inst.sigma2[k])
        coef.b += corrupt_b
        A, B, b = coef.A, coef.B, coef.b

        def surrogate(C, eta, V):
            quad = np.einsum("...gmd,mn,...gnd->...", V.conj(), A, V).real
            lin = 2.0 * np.einsum("dm,...md->...", B, V[..., g_k, :, :]).real
            val = quad + lin + b
            if cache_side:
                val = val + 0.5 * (eta ** 2 + C ** 2) + F * eta - (eta0 + C0) * (eta + C)
            return val

        def exact(C, eta, V):
            val = -_mi(inst, V, k)
            if cache_side:
                val = val + (F - C) * eta
            return val

        worst_eq = max(worst_eq, abs(float(surrogate(C0, eta0, V0) - exact(C0, eta0, V0))))

        n = n_samples // K + (1 if k < n_samples % K else 0)
        scales = 10.0 ** rng.uniform(-4, 0.5, size=n)
        dV = rng.standard_normal((n,) + V0.shape) + 1j * rng.standard_normal((n,) + V0.shape)
        dV *= (scales * np.sqrt(power / np.sum(np.abs(dV) ** 2, axis=(1, 2, 3))))[:, None, None, None]
        Vp = V0[None] + dV
        Cp = np.clip(C0 + scales * rng.standard_normal(n) * F / 4, 0.0, F)
        ep = eta0 + scales * rng.standard_normal(n) * 0.1
        margin = surrogate(Cp, ep, Vp) - exact(Cp, ep, Vp)
        worst_margin = min(worst_margin, float(margin.min()))

        # gradients at the expansion point
        if cache_side:
            gC = C0 - (eta0 + C0)
            ge = eta0 + F - (eta0 + C0)
            fdC = fd_gradient(lambda c: exact(c, eta0, V0), C0)
            fde = fd_gradient(lambda e: exact(C0, e, V0), eta0)
            worst_grad = max(worst_grad, abs(gC - fdC) / max(abs(fdC), 1e-3),
                             abs(ge - fde) / max(abs(fde), 1e-3))
        gV = np.stack([2.0 * (A @ V0[g] + (B.conj().T if g == g_k else 0.0)) for g in range(inst.G)])
        fdV = fd_gradient(lambda V: float(exact(C0, eta0, V)), V0, step=1e-5 * np.sqrt(power))
        ref = max(np.max(np.abs(fdV)), 1e-12)
        worst_grad = max(worst_grad, float(np.max(np.abs(gV - fdV))) / ref)

    passed = worst_margin >= -1e-9 and worst_eq <= 1e-8 and worst_grad <= 1e-4
    label = name or ("surrogate_cache_bound" if cache_side else "surrogate_delivery_bound")
    note = f"margin={worst_margin:.2e} eq={worst_eq:.2e} grad={worst_grad:.2e}"
    return OracleResult(label, worst_eq, worst_grad, passed, n_samples, seed, note)


def check_convexity(inst: Instance, n_segments=100, seed=0) -> OracleResult:
    """Midpoint convexity of the cache-side surrogate along random segments."""
    from .surrogate import eval_f, expansion_coefficients

    rng = np.random.default_rng(seed)
    M = inst.H.shape[-1]
    power = 10.0 * inst.sigma2.mean() / np.mean(np.abs(inst.H) ** 2)
    worst = -np.inf
    for i in range(n_segments):
        k = i % len(inst.cluster_of)
        V0 = _random_V(rng, inst.G, M, inst.d, power)
        coef = expansion_coefficients(inst.H[k], list(V0), int(inst.cluster_of[k]),
                                      inst.sigma2[k], 0.05, 10.0, inst.F[k])
        pts = [(rng.uniform(0, 100), rng.uniform(-1, 1), _random_V(rng, inst.G, M, inst.d, power))
               for _ in range(2)]
        vals = [eval_f(coef, C, e, list(V), inst.F[k], 0.05, 10.0) for C, e, V in pts]
        mid = [(a + b) / 2 for a, b in zip(pts[0][:2], pts[1][:2])]
        Vm = (pts[0][2] + pts[1][2]) / 2
        fm = eval_f(coef, mid[0], mid[1], list(Vm), inst.F[k], 0.05, 10.0)
        worst = max(worst, fm - 0.5 * (vals[0] + vals[1]))
    return OracleResult("surrogate_convexity", max(worst, 0.0), 0.0, worst <= 1e-10,
                        n_segments, seed, f"worst midpoint excess={worst:.2e}")


# Lagrangian minimizer oracle ------------------------------------------------------

def _lagrangian_pieces(sub, C, eta, V, delta, lam, mu):
    """Value of the partial Lagrangian and its gradient, written with loops."""
    S, G = eta.shape
    K = len(sub.cluster_of)
    val = (-np.sum(sub.weight * sub.F_sg * eta) + 0.5 * sub.rho1 * np.sum((eta - sub.eta0) ** 2)
           + sub.rho2 * np.sum(np.abs(V - sub.V0) ** 2) + 0.5 * sub.rho3 * np.sum((C - sub.C0) ** 2)
           + mu * (C.sum() - sub.C_tot))
    gC = sub.rho3 * (C - sub.C0) + mu
    ge = -sub.weight * sub.F_sg + sub.rho1 * (eta - sub.eta0)
    gV = 2.0 * sub.rho2 * (V - sub.V0)
    for s in range(S):
        power = np.sum(np.abs(V[s]) ** 2)
        val += delta[s, 0] * (power - sub.P_tot)
        gV[s] += 2.0 * delta[s, 0] * V[s]
        for k in range(K):
            g_k = sub.cluster_of[k]
            A = sub.coef.A[s, k]
            B = sub.coef.B[s, k]
            j = sub.cache_index[s, k]
            anchor = sub.eta0[s, g_k] + sub.C0[j]
            F = sub.F_sg[s, g_k]
            e = eta[s, g_k]
            f = sum(np.real(np.trace(V[s, g].conj().T @ A @ V[s, g])) for g in range(G))
            f += 2.0 * np.real(np.trace(B @ V[s, g_k]))
            f += 0.5 * (e ** 2 + C[j] ** 2) + F * e - anchor * (e + C[j]) + sub.coef.b[s, k]
            val += lam[s, k] * f
            for g in range(G):
                gV[s, g] += 2.0 * lam[s, k] * (A @ V[s, g])
            gV[s, g_k] += 2.0 * lam[s, k] * B.conj().T
            ge[s, g_k] += lam[s, k] * (e + F - anchor)
            gC[j] += lam[s, k] * (C[j] - anchor)
    return val, gC, ge, gV


def minimize_lagrangian(sub, delta, lam, mu, tol=1e-10, max_iter=200_000):
    """Projected gradient descent on the Lagrangian over the cache box."""
    S, G = sub.eta0.shape
    lam_g = np.zeros((S, G))
    lam_j = np.zeros(len(sub.C0))
    amax = np.zeros(S)
    for s in range(S):
        for k in range(len(sub.cluster_of)):
            lam_g[s, sub.cluster_of[k]] += lam[s, k]
            lam_j[sub.cache_index[s, k]] += lam[s, k]
            amax[s] += lam[s, k] * np.linalg.eigvalsh(sub.coef.A[s, k]).max()
    step_e = 1.0 / (sub.rho1 + lam_g)
    step_C = 1.0 / (sub.rho3 + lam_j)
    step_V = 1.0 / (2.0 * (sub.rho2 + delta[:, 0] + amax))
    C = sub.C0.copy()
    eta = sub.eta0.copy()
    V = sub.V0.copy()
    for it in range(max_iter):
        _, gC, ge, gV = _lagrangian_pieces(sub, C, eta, V, delta, lam, mu)
        C_new = np.clip(C - step_C * gC, 0.0, sub.cache_cap)
        eta_new = eta - step_e * ge
        V_new = V - step_V[:, None, None, None] * gV
        move = max(np.max(np.abs(C_new - C)), np.max(np.abs(eta_new - eta)),
                   np.max(np.abs(V_new - V)))
        C, eta, V = C_new, eta_new, V_new
        if move < tol:
            break
    return C, eta, V, it + 1


def prop2_subproblem(seed, G=2, per_cluster=2, T=2, M=4, N=1, rho=(10.0, 1.0, 1.0)):
    """Small random cache subproblem with normalized channels."""
    from .dual import CacheSubproblem
    from .surrogate import compute_coefficients

    if min(rho) <= 0:
        raise ValueError("prox weights must be positive")
    rng = np.random.default_rng(seed)
    K = G * per_cluster
    d = min(M, N)
    cluster_of = np.repeat(np.arange(G), per_cluster)
    H = (rng.standard_normal((T, K, N, M)) + 1j * rng.standard_normal((T, K, N, M))) / np.sqrt(2)
    V0 = (rng.standard_normal((T, G, M, d)) + 1j * rng.standard_normal((T, G, M, d))) / 2
    F = 10.0
    C0 = rng.uniform(1.0, 4.0, K)
    eta0 = rng.uniform(0.05, 0.2, (T, G))
    anchor = eta0[:, cluster_of] + C0[None, :]
    coef = compute_coefficients(H, V0, cluster_of, np.ones(K), anchor=anchor)
    return CacheSubproblem(
        coef=coef, V0=V0, eta0=eta0, C0=C0, F_sg=np.full((T, G), F), weight=np.ones((T, G)),
        cache_index=np.tile(np.arange(K), (T, 1)), cache_cap=np.full(K, F),
        cluster_of=cluster_of, P_tot=2.0, C_tot=8.0, rho1=rho[0], rho2=rho[1], rho3=rho[2],
        power_group=np.zeros(G, dtype=int))


def check_prop2(n_duals=50, seed=0, rho=(10.0, 1.0, 1.0), zero_duals=False) -> OracleResult:
    """Closed-form Lagrangian minimizer against projected gradient descent."""
    from .dual import DualState, recover_primal

    if min(rho) <= 0:
        return OracleResult("lagrangian_minimizer", np.nan, np.nan, False, 0, seed,
                            "invalid input: prox weights must be positive, not run")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_duals):
        sub = prop2_subproblem(seed * 1000 + i, rho=rho)
        S, P, K = sub.shape
        if zero_duals:
            delta, lam, mu = np.zeros((S, P)), np.zeros((S, K)), 0.0
        else:
            delta = rng.exponential(0.5, (S, P))
            lam = rng.exponential(1.0, (S, K))
            mu = float(rng.exponential(2.0))
        closed = recover_primal(DualState(delta, lam, mu), sub)
        C, eta, V, _ = minimize_lagrangian(sub, delta, lam, mu)
        dev = max(np.max(np.abs(C - closed.C)), np.max(np.abs(eta - closed.eta)),
                  np.max(np.abs(V - closed.V)))
        worst = max(worst, float(dev))
    return OracleResult("lagrangian_minimizer", worst, worst, worst < 1e-6, n_duals, seed)


# Brute-force cache oracle -----------------------------------------------------------

def fixed_beam_objective(mi, C, F_bs, members):
    """Sum over samples and clusters of min_k F/(F-C_k) MI for a batch of C rows."""
    C = np.atleast_2d(C)
    total = np.zeros(C.shape[0])
    for ks in members:
        ks = list(ks)
        gap = F_bs[ks][None, :] - C[:, ks]
        with np.errstate(divide="ignore"):
            fac = np.where(gap > 0, F_bs[ks][None, :] / np.where(gap > 0, gap, 1.0), np.inf)
        # (n, T, |K_g|)
        rates = fac[:, None, :] * mi[None, :, ks]
        total += np.min(rates, axis=2).sum(axis=1)
    return total


def brute_force_cache(mi, F_bs, members, C_tot, grid_step=1e-2):
    """Exhaustive search over a simplex grid of cache vectors, K <= 3.

    ``mi`` holds the mutual information per (t, k) at the fixed beamformers;
    the grid spacing is ``grid_step * C_tot`` and each axis also contains
    the BS's cap min(F, C_tot). Returns (best C, best value,
    spacing, values of the grid neighbours of the best point).
    """
    F_bs = np.asarray(F_bs, dtype=float)
    K = len(F_bs)
    if K > 3:
        raise ValueError("brute-force cache search is limited to K <= 3")
    n = int(round(1.0 / grid_step))
    h = C_tot / n if C_tot > 0 else 0.0
    axes = []
    for F in F_bs:
        top = min(F, C_tot)
        pts = np.arange(n + 1) * h
        axes.append(np.union1d(pts[pts <= top * (1 + 1e-12)], [top]))
    C = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, K)
    C = C[C.sum(axis=1) <= C_tot * (1 + 1e-12)]
    vals = fixed_beam_objective(np.asarray(mi), C, F_bs, members)
    i = int(np.argmax(vals))
    nb = np.max(np.abs(C - C[i]), axis=1) <= h * (1 + 1e-9)
    return C[i], float(vals[i]), h, vals[nb]


# Solver against the grid oracle -------------------------------------------------------

def small_cache_instance(seed, gains=(1.0, 0.25), T=1, C_tot=0.6):
    """G=1, two BSs, M=2, N=1 config and channels; ``gains`` scale each BS's channel.

    The file is one content unit long so that rates per unit and cache sizes
    have similar magnitudes, which keeps the outer loop short.
    """
    from .config import ProblemConfig
    rng = np.random.default_rng(seed)
    K = len(gains)
    config = ProblemConfig(G=1, K=K, cluster_of=[0] * K, M=2, N=1, d=1, P_tot=10.0,
                           C_tot=C_tot, F_g=[1.0], sigma2=[1.0] * K, T=T,
                           rho1=10.0, rho2=1.0, rho3=1.0, tol_inner=1e-9, tol_outer=1e-7,
                           outer_window=5, max_outer=500, backtracking=True)
    H = (rng.standard_normal((T, K, 1, 2)) + 1j * rng.standard_normal((T, K, 1, 2))) / np.sqrt(2)
    H = H * np.sqrt(np.asarray(gains))[None, :, None, None]
    return config, H


def check_cache_oracle(seed=0, gains=(1.0, 0.25), grid_step=1e-2) -> OracleResult:
    """Fixed-beamformer cache allocation against exhaustive grid search."""
    from .sca import solve_cache_allocation

    config, H = small_cache_instance(seed, gains)
    sol = solve_cache_allocation(config, H, fix_V=True)
    V = sol.primal.V
    mi = all_mutual_information(H, V, config.cluster_of, config.sigma2)
    F_bs = np.asarray(config.F_of_bs())
    value = float(fixed_beam_objective(mi, sol.primal.C[None], F_bs, config.members)[0])
    C_best, best, h, neighbours = brute_force_cache(mi, F_bs, config.members, config.C_tot,
                                                    grid_step)
    slack = float(np.max(np.abs(neighbours - best)))
    shortfall = max(best - value, 0.0)
    dist = float(np.max(np.abs(sol.primal.C - C_best)))
    passed = shortfall <= slack and dist <= h * (1 + 1e-9)
    note = f"solver={value:.6f} grid={best:.6f} step_slack={slack:.2e} |dC|={dist:.3f}"
    return OracleResult("cache_vs_grid", shortfall, shortfall / max(abs(best), 1e-12),
                        passed, 1, seed, note)


def standard_suite(quick=False):
    """Every oracle on the standard seeded instances plus negative controls.

    Negative controls are reported as passing when the corrupted input is
    detected.
    """
    n = 200 if quick else 1000
    results = []
    for seed in range(4):
        results.append(check_prop1(random_instance(seed), n, seed=seed))
    results.append(check_prop1(desk_instance(4), n, seed=4))
    results.append(check_prop1(random_instance(5), n, seed=5, cache_side=False))
    results.append(check_convexity(random_instance(6), seed=6))
    results.append(check_prop2(10 if quick else 50, seed=0))
    results.append(check_cache_oracle(0))
    ctrl = check_prop1(random_instance(7), 100, seed=7, corrupt_b=0.1)
    results.append(OracleResult("control_corrupted_b", ctrl.max_abs, ctrl.max_rel,
                                not ctrl.passed, ctrl.samples, ctrl.seed, "expected to be caught"))
    ctrl = check_prop2(1, seed=0, rho=(1.0, 1.0, 0.0))
    results.append(OracleResult("control_zero_prox", ctrl.max_abs, ctrl.max_rel,
                                not ctrl.passed and "invalid" in ctrl.note, 0, ctrl.seed,
                                "expected to be refused"))
    return results
