"""Dual first-order solver for the prox-regularized SCA subproblems.

Each subproblem is strongly convex, so its Lagrangian has a unique minimizer
in closed form for any non-negative multipliers. The dual function is then
smooth and is maximized by projected gradient ascent, optionally with
Nesterov momentum on the multipliers.

Two subproblem families share the ascent loop:

* ``CacheSubproblem``: joint cache / beamformer / rate update over many
  channel samples (cache allocation, single and multi-file).
* ``DeliverySubproblem``: beamformer / rate update for one channel sample at
  fixed cache sizes (content delivery).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .surrogate import Coefficients, _ct, f_values, h_values


class NonConvergenceError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class DualState:
    delta: np.ndarray            # (S, P) power multipliers
    lam: np.ndarray              # (S, K) rate-constraint multipliers
    mu: float = 1.0              # cache-budget multiplier
    tilde: "DualState | None" = None
    theta: float = 1.0
    s: int = 0

    @classmethod
    def ones(cls, S, P, K, lam_mask=None):
        lam = np.ones((S, K))
        if lam_mask is not None:
            lam = lam * lam_mask
        return cls(np.ones((S, P)), lam, 1.0)

    def multipliers(self) -> "DualState":
        return DualState(self.delta.copy(), self.lam.copy(), float(self.mu))

    def scaled_add(self, other: "DualState", step: float) -> "DualState":
        return DualState(self.delta + step * other.delta, self.lam + step * other.lam,
                         self.mu + step * other.mu)

    def positive(self) -> "DualState":
        return DualState(np.maximum(self.delta, 0.0), np.maximum(self.lam, 0.0),
                         max(self.mu, 0.0))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.delta.ravel(), self.lam.ravel(), [self.mu]])

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.delta >= 0) and np.all(self.lam >= 0) and self.mu >= 0)


def projected_step(dual: DualState, gradient: DualState, beta: float) -> DualState:
    """Multipliers moved along the dual gradient and projected onto >= 0."""
    return dual.scaled_add(gradient, beta).positive()


def next_theta(theta: float) -> float:
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))


def momentum_step(dual: DualState, gradient: DualState, beta: float,
                  momentum: bool = True) -> DualState:
    """One accelerated update.

    The projected step from the current (extrapolated) point becomes the new
    tilde iterate; the working point extrapolates along the tilde difference
    with weight (theta_prev - 1) / theta. The extrapolated point is clipped at
    zero because the closed-form primal recovery needs non-negative
    multipliers.
    """
    theta = next_theta(dual.theta)
    tilde = projected_step(dual, gradient, beta)
    prev = dual.tilde if dual.tilde is not None else dual.multipliers()
    weight = (dual.theta - 1.0) / theta if momentum else 0.0
    diff = tilde.scaled_add(prev, -1.0)
    out = tilde.scaled_add(diff, weight).positive()
    out.tilde = tilde
    out.theta = theta
    out.s = dual.s + 1
    return out


# Cache allocation subproblem -------------------------------------------------

@dataclass
class CacheSubproblem:
    """One prox-regularized SCA subproblem of the cache allocation problem.

    Samples ``s`` index channel draws (and request tuples in the multi-file
    case). Cache variables are indexed by ``j``; ``cache_index[s, k]`` names
    the cache variable BS ``k`` relies on in sample ``s``.
    """

    coef: Coefficients
    V0: np.ndarray              # (S, G, M, d)
    eta0: np.ndarray            # (S, G)
    C0: np.ndarray              # (J,)
    F_sg: np.ndarray            # (S, G) requested file size
    weight: np.ndarray          # (S, G) objective weight
    cache_index: np.ndarray     # (S, K)
    cache_cap: np.ndarray       # (J,)
    cluster_of: np.ndarray      # (K,)
    P_tot: float
    C_tot: float
    rho1: float
    rho2: float
    rho3: float
    power_group: np.ndarray     # (G,) power budget index per cluster
    fix_V: bool = False

    def __post_init__(self):
        G = self.V0.shape[1]
        K = len(self.cluster_of)
        self.E = np.zeros((K, G))
        self.E[np.arange(K), self.cluster_of] = 1.0
        self.n_power = int(self.power_group.max()) + 1
        self.PG = np.zeros((G, self.n_power))
        self.PG[np.arange(G), self.power_group] = 1.0
        self.F_sk = self.F_sg[:, self.cluster_of]
        self.eta0_sk = self.eta0[:, self.cluster_of]
        self.C0_sk = self.C0[self.cache_index]
        self.flat_index = self.cache_index.ravel()
        self.J = len(self.C0)

    @property
    def shape(self):
        S, K = self.cache_index.shape
        return S, self.n_power, K

    def initial_dual(self) -> DualState:
        S, P, K = self.shape
        dual = DualState.ones(S, P, K)
        if self.fix_V:
            dual.delta[:] = 0.0
        return dual


@dataclass
class CachePrimal:
    C: np.ndarray
    V: np.ndarray
    eta: np.ndarray


def _solve_beamformers(coef, lam, delta_g, E, V0, rho2, shared):
    """Minimizer of the V-part of the Lagrangian for every (s, g).

    ``delta_g`` is the power multiplier seen by each cluster, (S, G). When
    every cluster sees the same system matrix it is factorized once per s.
    """
    S, G, M, d = V0.shape
    lamE = lam[:, :, None] * E[None]                          # (S, K, G)
    corr = np.swapaxes(lamE, 1, 2) @ coef.flat("BH")          # (S, G, M*d)
    rhs = rho2 * V0 - corr.reshape(S, G, M, d)
    eye = np.eye(M)
    if coef.own_only:
        sysm = (np.swapaxes(lamE, 1, 2) @ coef.flat("A")).reshape(S, G, M, M)
        sysm = sysm + (rho2 + delta_g)[:, :, None, None] * eye
        return np.linalg.solve(sysm, rhs)
    base = (lam[:, None, :] @ coef.flat("A")).reshape(S, M, M)
    if shared:
        sysm = base + (rho2 + delta_g[:, 0])[:, None, None] * eye
        stacked = np.moveaxis(rhs, 1, 2).reshape(S, M, G * d)
        sol = np.linalg.solve(sysm, stacked)
        return np.moveaxis(sol.reshape(S, M, G, d), 2, 1)
    sysm = base[:, None] + (rho2 + delta_g)[:, :, None, None] * eye
    return np.linalg.solve(sysm, rhs)


def recover_primal(dual: DualState, sub: CacheSubproblem) -> CachePrimal:
    """Unique Lagrangian minimizer (C, eta, V) at non-negative multipliers."""
    lam = dual.lam
    lam_g = lam @ sub.E                                        # (S, G)
    lamC_g = (lam * sub.C0_sk) @ sub.E
    eta = sub.eta0 + ((sub.weight - lam_g) * sub.F_sg + lamC_g) / (sub.rho1 + lam_g)

    if sub.fix_V:
        V = sub.V0.copy()
    else:
        delta_g = dual.delta @ sub.PG.T                        # (S, G)
        V = _solve_beamformers(sub.coef, lam, delta_g, sub.E, sub.V0, sub.rho2,
                               shared=sub.n_power == 1)

    lam_flat = lam.ravel()
    num = np.bincount(sub.flat_index, weights=lam_flat * sub.eta0_sk.ravel(), minlength=sub.J)
    den = np.bincount(sub.flat_index, weights=lam_flat, minlength=sub.J)
    C = sub.C0 + (num - dual.mu) / (sub.rho3 + den)
    C = np.minimum(np.maximum(C, 0.0), sub.cache_cap)
    return CachePrimal(C, V, eta)


def power_usage(V, PG):
    per_cluster = np.sum(np.abs(V) ** 2, axis=(2, 3))          # (S, G)
    return per_cluster @ PG                                     # (S, P)


def lagrangian_parts(primal: CachePrimal, sub: CacheSubproblem):
    """Prox objective and constraint residuals at a primal point."""
    obj = (-np.sum(sub.weight * sub.F_sg * primal.eta)
           + 0.5 * sub.rho1 * np.sum((primal.eta - sub.eta0) ** 2)
           + sub.rho2 * np.sum(np.abs(primal.V - sub.V0) ** 2)
           + 0.5 * sub.rho3 * np.sum((primal.C - sub.C0) ** 2))
    pow_res = power_usage(primal.V, sub.PG) - sub.P_tot
    f = f_values(sub.coef, primal.C[sub.cache_index], primal.eta[:, sub.cluster_of],
                 primal.V, sub.F_sk)
    cache_res = float(np.sum(primal.C) - sub.C_tot)
    return obj, DualState(pow_res, f, cache_res)


def dual_gradient(primal: CachePrimal, sub: CacheSubproblem) -> DualState:
    """Gradient of the dual function: the constraint residuals at the minimizer."""
    _, grad = lagrangian_parts(primal, sub)
    if sub.fix_V:
        grad.delta = np.zeros_like(grad.delta)
    return grad


def lagrangian(primal, dual: DualState, sub) -> float:
    obj, res = lagrangian_parts(primal, sub)
    return float(obj + np.sum(dual.delta * res.delta) + np.sum(dual.lam * res.lam)
                 + dual.mu * res.mu)


def dual_objective(dual: DualState, sub: CacheSubproblem) -> float:
    return lagrangian(recover_primal(dual, sub), dual, sub)


# Content delivery subproblem -------------------------------------------------

@dataclass
class DeliverySubproblem:
    """Prox-regularized SCA subproblem of beamforming at fixed caches.

    Rate constraints read ``(F_g - C_k) eta_g + h_k(V) <= 0``. BSs holding
    the whole file (``active[k]`` False) impose no constraint.
    """

    coef: Coefficients          # leading axes (1, K), b_hat only
    V0: np.ndarray              # (1, G, M, d)
    eta0: np.ndarray            # (G,)
    F_g: np.ndarray             # (G,)
    C: np.ndarray               # (K,)
    active: np.ndarray          # (K,) bool
    cluster_of: np.ndarray
    P_tot: float
    rho1: float
    rho2: float
    power_group: np.ndarray     # (G,)
    weight: np.ndarray = None   # (G,) objective weight

    def __post_init__(self):
        G = self.V0.shape[1]
        K = len(self.cluster_of)
        self.E = np.zeros((K, G))
        self.E[np.arange(K), self.cluster_of] = 1.0
        self.n_power = int(self.power_group.max()) + 1
        self.PG = np.zeros((G, self.n_power))
        self.PG[np.arange(G), self.power_group] = 1.0
        self.gap = (self.F_g[self.cluster_of] - self.C) * self.active   # (K,)
        if self.weight is None:
            self.weight = np.ones(G)

    @property
    def shape(self):
        return 1, self.n_power, len(self.cluster_of)

    def initial_dual(self) -> DualState:
        S, P, K = self.shape
        return DualState.ones(S, P, K, lam_mask=self.active.astype(float)[None])


def recover_delivery(dual: DualState, sub: DeliverySubproblem) -> CachePrimal:
    lam = dual.lam * sub.active[None]
    lam_gap = (lam[0] * sub.gap) @ sub.E                        # (G,)
    eta = sub.eta0 + (sub.weight * sub.F_g - lam_gap) / sub.rho1
    delta_g = dual.delta @ sub.PG.T
    V = _solve_beamformers(sub.coef, lam, delta_g, sub.E, sub.V0, sub.rho2,
                           shared=sub.n_power == 1)
    return CachePrimal(sub.C, V, eta)


def delivery_parts(primal: CachePrimal, sub: DeliverySubproblem):
    obj = (-np.sum(sub.weight * sub.F_g * primal.eta)
           + 0.5 * sub.rho1 * np.sum((primal.eta - sub.eta0) ** 2)
           + sub.rho2 * np.sum(np.abs(primal.V - sub.V0) ** 2))
    pow_res = power_usage(primal.V, sub.PG) - sub.P_tot
    rate = (sub.gap * primal.eta[sub.cluster_of] + h_values(sub.coef, primal.V)[0]) * sub.active
    return obj, DualState(pow_res, rate[None], 0.0)


# Ascent loop -----------------------------------------------------------------

@dataclass
class SubproblemSolution:
    primal: CachePrimal
    dual: DualState
    dual_objective: float
    iterations: int
    converged: bool
    beta: float
    history: list = field(default_factory=list)


_FAMILIES = {
    CacheSubproblem: (recover_primal, lagrangian_parts),
    DeliverySubproblem: (recover_delivery, delivery_parts),
}


def _evaluate(dual, sub):
    recover, parts = _FAMILIES[type(sub)]
    primal = recover(dual, sub)
    obj, res = parts(primal, sub)
    if isinstance(sub, CacheSubproblem) and sub.fix_V:
        res.delta = np.zeros_like(res.delta)
    if isinstance(sub, DeliverySubproblem):
        res.mu = 0.0
    D = float(obj + np.sum(dual.delta * res.delta) + np.sum(dual.lam * res.lam)
              + dual.mu * res.mu)
    return primal, D, res


def _inner(a: DualState, b: DualState) -> float:
    return float(np.sum(a.delta * b.delta) + np.sum(a.lam * b.lam) + a.mu * b.mu)


def _mapping_norm(dual: DualState, grad: DualState, beta: float) -> float:
    """Largest entry of the projected-gradient mapping (zero exactly at a dual optimum)."""
    step = projected_step(dual, grad, beta).scaled_add(dual.multipliers(), -1.0)
    return float(np.max(np.abs(step.flat()))) / beta


def solve_subproblem(sub, mode="accelerated", beta=1.0, tol=1e-3, max_iter=100_000,
                     backtracking=False, momentum=True, trace=None,
                     raise_on_cap=True, initial=None) -> SubproblemSolution:
    """Maximize the dual function from all-ones multipliers (or ``initial``).

    Stops when |D_s - D_{s-1}| / max(|D_s|, 1) < tol and the projected
    gradient mapping is below sqrt(tol); the second test guards against
    stalls where momentum lands on the same clipped point twice. With ``backtracking``
    the step is halved whenever the ascent step fails the quadratic
    lower-bound test at the current point.
    """
    if mode not in ("plain", "accelerated"):
        raise ValueError(f"unknown mode {mode!r}")
    dual = sub.initial_dual() if initial is None else initial.multipliers().positive()
    if isinstance(sub, DeliverySubproblem):
        dual.mu = 0.0
    D_prev = None
    history = []
    max_viol = 0.0
    for it in range(1, max_iter + 1):
        primal, D, grad = _evaluate(dual, sub)
        history.append(D)
        if trace is not None:
            max_viol = max(float(np.max(grad.delta, initial=0.0)),
                           float(np.max(grad.lam, initial=0.0)), float(grad.mu))
            trace.append((it, D, max(max_viol, 0.0), dual.theta))
        if (D_prev is not None and abs(D - D_prev) / max(abs(D), 1.0) < tol
                and _mapping_norm(dual, grad, beta) <= math.sqrt(tol)):
            return SubproblemSolution(primal, dual, D, it, True, beta, history)
        D_prev = D
        if backtracking:
            while True:
                cand = projected_step(dual, grad, beta)
                _, D_c, _ = _evaluate(cand, sub)
                step = cand.scaled_add(dual.multipliers(), -1.0)
                bound = D + _inner(grad, step) - _inner(step, step) / (2.0 * beta)
                if D_c >= bound - 1e-12 * max(abs(D), 1.0) or beta < 1e-12:
                    break
                beta *= 0.5
        if mode == "plain":
            new = projected_step(dual, grad, beta)
            new.s = dual.s + 1
            dual = new
        else:
            dual = momentum_step(dual, grad, beta, momentum=momentum)
    sol = SubproblemSolution(primal, dual, D, max_iter, False, beta, history)
    if raise_on_cap:
        raise NonConvergenceError(f"dual ascent hit the {max_iter}-iteration cap", sol)
    return sol


def write_trace(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "D", "max_violation", "theta"])
        for row in rows:
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])
