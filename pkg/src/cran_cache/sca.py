"""Outer successive convex approximation loops.

Every outer iteration expands the rate constraints around the current point,
solves the prox-regularized convex subproblem in the dual domain, restores
the power and cache budgets exactly, and re-tightens the auxiliary rates to
the rates the new (C, V) actually achieve. A backtracking line search on the
segment from the current point keeps the true objective non-increasing.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import ProblemConfig
from .dual import (CacheSubproblem, DeliverySubproblem, NonConvergenceError,
                   solve_subproblem)
from .model import PrimalState, all_mutual_information
from .surrogate import compute_coefficients

log = logging.getLogger(__name__)

MIN_STEP = 2.0 ** -10
# Inner-tolerance tightenings tried before a failed line search ends the loop.
RETRIES = 2


@dataclass
class CacheModel:
    """Sample-approximation instance in the flattened layout used by the solver.

    Sample ``s`` carries one channel draw; cache variable ``j`` is owned by BS
    ``cache_owner[j]``. Single-file problems have ``j == k``.
    """

    H: np.ndarray               # (S, K, N, M)
    cluster_of: np.ndarray
    sigma2: np.ndarray
    F_sg: np.ndarray            # (S, G)
    weight: np.ndarray          # (S, G)
    cache_index: np.ndarray     # (S, K)
    cache_cap: np.ndarray       # (J,)
    cache_owner: np.ndarray     # (J,)
    P_tot: float
    C_tot: float
    G: int
    d: int
    interference: bool = True
    power_group: np.ndarray = None

    def __post_init__(self):
        if self.power_group is None:
            self.power_group = np.zeros(self.G, dtype=int)
        self.members = [np.flatnonzero(self.cluster_of == g) for g in range(self.G)]

    @property
    def S(self):
        return self.H.shape[0]


def cache_model(config: ProblemConfig, H, interference=True, per_cluster_power=False) -> CacheModel:
    H = np.asarray(getattr(H, "H", H), dtype=complex)
    S, K = H.shape[:2]
    F = np.asarray(config.F_g, dtype=float)
    cluster_of = np.asarray(config.cluster_of)
    return CacheModel(
        H=H, cluster_of=cluster_of, sigma2=np.asarray(config.sigma2, dtype=float),
        F_sg=np.tile(F, (S, 1)), weight=np.ones((S, config.G)),
        cache_index=np.tile(np.arange(K), (S, 1)), cache_cap=F[cluster_of].copy(),
        cache_owner=np.arange(K), P_tot=float(config.P_tot), C_tot=float(config.C_tot),
        G=config.G, d=config.d, interference=interference,
        power_group=np.arange(config.G) if per_cluster_power else np.zeros(config.G, dtype=int),
    )


def _initial_beamformers(model: CacheModel, M):
    counts = np.bincount(model.power_group)
    amp = np.sqrt(model.P_tot / (counts[model.power_group] * M * model.d))
    V = np.ones((model.S, model.G, M, model.d), dtype=complex)
    return V * amp[None, :, None, None]


def tight_eta(model: CacheModel, C, V, fallback=None):
    """Largest feasible auxiliary rate per (s, g): min_k MI / (F - C_k).

    BSs whose cache holds the whole file are skipped; when a cluster has no
    other member the ``fallback`` value (or 0) is kept.
    """
    mi = all_mutual_information(model.H, V, model.cluster_of, model.sigma2, model.interference)
    C_sk = C[model.cache_index]
    F_sk = model.F_sg[:, model.cluster_of]
    gap = F_sk - C_sk
    full = gap <= 1e-9 * F_sk
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(full, np.inf, mi / np.where(full, 1.0, gap))
    eta = np.empty((model.S, model.G))
    for g, ks in enumerate(model.members):
        eta[:, g] = np.min(ratio[:, ks], axis=1)
    bad = ~np.isfinite(eta)
    if np.any(bad):
        eta[bad] = 0.0 if fallback is None else fallback[bad]
    return eta


def objective(model: CacheModel, eta) -> float:
    """Cost being minimized: -sum_s sum_g w F eta."""
    return float(-np.sum(model.weight * model.F_sg * eta))


def initialize_cache_problem(config: ProblemConfig, channels, model: CacheModel | None = None) -> PrimalState:
    """Equal power split, equal cache split and the matching tight rates."""
    model = model or cache_model(config, channels)
    V = _initial_beamformers(model, config.M)
    files_per_bs = np.bincount(model.cache_owner, minlength=len(model.cluster_of))
    C = model.C_tot / (len(model.cluster_of) * files_per_bs[model.cache_owner])
    limit = 0.99 * float(model.cache_cap.min())
    if np.any(C >= model.cache_cap):
        warnings.warn(f"equal cache split exceeds a file size; clamping to {limit:g}")
        C = np.minimum(C, limit)
    C = C.astype(float)
    return PrimalState(C, V, tight_eta(model, C, V))


def _restore(model: CacheModel, C, V):
    """Scale V per power group and C to meet their budgets exactly."""
    C = np.minimum(np.maximum(C, 0.0), model.cache_cap)
    total = C.sum()
    if total > model.C_tot:
        C = C * (model.C_tot / total)
    per = np.sum(np.abs(V) ** 2, axis=(2, 3))                  # (S, G)
    P = np.zeros((model.S, int(model.power_group.max()) + 1))
    for g in range(model.G):
        P[:, model.power_group[g]] += per[:, g]
    scale = np.where(P > model.P_tot, np.sqrt(model.P_tot / np.maximum(P, 1e-300)), 1.0)
    V = V * scale[:, model.power_group][:, :, None, None]
    return C, V


@dataclass
class SolveTrace:
    objective: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    max_residual: list = field(default_factory=list)
    step: list = field(default_factory=list)

    def write_csv(self, path, timing=False):
        """Write one row per outer iteration.

        Wall-clock times differ between runs, so the ``wall_ms`` column is
        left empty unless ``timing`` is set; the file is then reproducible.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective", "inner_iterations", "wall_ms", "max_residual"])
            for i, row in enumerate(zip(self.objective, self.inner_iterations,
                                        self.wall_ms, self.max_residual)):
                wall = repr(row[2]) if timing else ""
                w.writerow([i, repr(row[0]), row[1], wall, repr(row[3])])


@dataclass
class CacheSolution:
    primal: PrimalState
    trace: SolveTrace
    converged: bool
    stationarity_gap: float
    model: CacheModel


def _residual(model, C, V):
    per = np.sum(np.abs(V) ** 2, axis=(2, 3))
    pw = max(float(np.max(per.sum(axis=1) if model.power_group.max() == 0 else per)) - model.P_tot, 0.0)
    cache = max(float(C.sum()) - model.C_tot, 0.0)
    box = max(float(np.max(-C, initial=0.0)), float(np.max(C - model.cache_cap, initial=0.0)))
    return max(pw, cache, box)


def _subproblem(model, config, state, fix_V):
    anchor = state.eta[:, model.cluster_of] + state.C[model.cache_index]
    coef = compute_coefficients(model.H, state.V, model.cluster_of, model.sigma2,
                                interference=model.interference, anchor=anchor)
    return CacheSubproblem(
        coef=coef, V0=state.V, eta0=state.eta, C0=state.C, F_sg=model.F_sg,
        weight=model.weight, cache_index=model.cache_index, cache_cap=model.cache_cap,
        cluster_of=model.cluster_of, P_tot=model.P_tot, C_tot=model.C_tot,
        rho1=config.rho1, rho2=config.rho2, rho3=config.rho3,
        power_group=model.power_group, fix_V=fix_V)


def _sca_step(model, config, state, fix_V, mode, tol=None, start=None):
    sub = _subproblem(model, config, state, fix_V)
    sol = solve_subproblem(sub, mode=mode, beta=config.beta,
                           tol=config.tol_inner if tol is None else tol,
                           max_iter=config.max_inner, backtracking=config.backtracking,
                           raise_on_cap=False, initial=start)
    if not sol.converged:
        log.warning("subproblem stopped at the %d-iteration cap; the line search decides "
                    "whether its iterate is used", config.max_inner)
    C_new, V_new = _restore(model, sol.primal.C, sol.primal.V)
    if fix_V:
        V_new = state.V
    return sol, C_new, V_new


def _line_search(model, state, obj, C_new, V_new, eta_hint):
    gamma = 1.0
    while gamma >= MIN_STEP:
        C = state.C + gamma * (C_new - state.C)
        V = state.V + gamma * (V_new - state.V)
        eta = tight_eta(model, C, V, fallback=state.eta + gamma * (eta_hint - state.eta))
        val = objective(model, eta)
        if val <= obj:
            return PrimalState(C, V, eta), val, gamma
        gamma *= 0.5
    return None, obj, 0.0


def run_sca(model: CacheModel, config: ProblemConfig, state: PrimalState | None = None,
            fix_V=False, mode="accelerated", max_outer=None) -> CacheSolution:
    """Outer loop shared by the single-file and multi-file problems."""
    if state is None:
        state = initialize_cache_problem(config, model.H, model)
    max_outer = config.max_outer if max_outer is None else max_outer
    obj = objective(model, state.eta)
    trace = SolveTrace([obj], [0], [0.0], [_residual(model, state.C, state.V)], [0.0])
    converged = False
    start = None
    for i in range(max_outer):
        t0 = time.perf_counter()
        tol = config.tol_inner
        for _ in range(RETRIES + 1):
            sol, C_new, V_new = _sca_step(model, config, state, fix_V, mode, tol, start)
            new_state, new_obj, gamma = _line_search(model, state, obj, C_new, V_new,
                                                     sol.primal.eta)
            if new_state is not None:
                break
            tol *= 1e-2
        if new_state is None:
            log.info("outer %d: no descent along the subproblem direction, stopping", i)
            converged = True
            break
        state, obj = new_state, new_obj
        if config.warm_start:
            start = sol.dual
        trace.objective.append(obj)
        trace.inner_iterations.append(sol.iterations)
        trace.wall_ms.append(1e3 * (time.perf_counter() - t0))
        trace.max_residual.append(_residual(model, state.C, state.V))
        trace.step.append(gamma)
        w = config.outer_window
        if len(trace.objective) > w:
            ref = trace.objective[-1 - w]
            if (ref - obj) / max(abs(ref), 1e-12) < config.tol_outer:
                converged = True
                break
    gap = stationarity_gap(model, config, state, fix_V=fix_V, mode=mode)
    return CacheSolution(state, trace, converged, gap, model)


def stationarity_gap(model, config, state, fix_V=False, mode="accelerated") -> float:
    """Relative objective change from one more full subproblem step at ``state``."""
    obj = objective(model, state.eta)
    sol, C_new, V_new = _sca_step(model, config, state, fix_V, mode)
    eta = tight_eta(model, C_new, V_new, fallback=sol.primal.eta)
    return abs(objective(model, eta) - obj) / max(abs(obj), 1e-12)


def solve_cache_allocation(config: ProblemConfig, channels, fix_V=False, V=None,
                           mode="accelerated", interference=True,
                           per_cluster_power=False) -> CacheSolution:
    """Optimize cache sizes jointly with per-sample beamformers.

    With ``fix_V`` the beamformers stay at ``V`` (or the equal-power start)
    and only the cache sizes and rates move.
    """
    model = cache_model(config, channels, interference, per_cluster_power)
    state = initialize_cache_problem(config, model.H, model)
    if V is not None:
        state = PrimalState(state.C, np.asarray(V, dtype=complex),
                            tight_eta(model, state.C, np.asarray(V, dtype=complex)))
    return run_sca(model, config, state, fix_V=fix_V, mode=mode)


# Content delivery --------------------------------------------------------------

@dataclass
class DeliveryResult:
    V: np.ndarray               # (G, M, d)
    eta: np.ndarray             # (G,)
    sum_rate: float             # nats, sum_g F_g eta_g
    cluster_rate: np.ndarray    # (G,) nats
    iterations: int
    objective_trace: list


def _delivery_rates(H, V, C, config, interference, active):
    mi = all_mutual_information(H[None], V[None], config.cluster_of, config.sigma2,
                                interference)[0]
    F = np.asarray(config.F_g)[config.cluster_of]
    rates = np.full(config.G, np.inf)
    for g, ks in enumerate(config.members):
        live = [k for k in ks if active[k]]
        if live:
            rates[g] = min(F[k] / (F[k] - C[k]) * mi[k] for k in live)
    return rates


def solve_mcmb(config: ProblemConfig, H_single, C_fixed, interference=True,
               per_cluster_power=False, rho1=None, rho2=None, tol=1e-3,
               max_outer=200, inner_tol=1e-6, max_inner=20_000,
               warm_start=None) -> DeliveryResult:
    """Beamformers maximizing the downloading sum-rate of one channel draw.

    Clusters whose members all cache the full file have unbounded rate and
    are left out of the objective (their beamformer is kept at zero).
    ``warm_start`` defaults to the config flag.
    """
    H = np.asarray(getattr(H_single, "H", H_single), dtype=complex)
    if H.ndim == 4:
        H = H[0]
    C = np.asarray(C_fixed, dtype=float)
    F_bs = np.asarray(config.F_g)[config.cluster_of]
    if np.any(C > F_bs + 1e-9) or np.any(C < -1e-9):
        raise ValueError("cache sizes must lie in [0, F]")
    active = C < F_bs - 1e-9 * F_bs
    cluster_of = np.asarray(config.cluster_of)
    live = np.array([bool(np.any(active[ks])) for ks in config.members])
    power_group = np.arange(config.G) if per_cluster_power else np.zeros(config.G, dtype=int)
    counts = np.bincount(power_group[live], minlength=config.G) if live.any() else None
    V = np.zeros((config.G, config.M, config.d), dtype=complex)
    for g in np.flatnonzero(live):
        V[g] = math.sqrt(config.P_tot / (counts[power_group[g]] * config.M * config.d))
    rho1 = config.rho1 if rho1 is None else rho1
    rho2 = config.rho2 if rho2 is None else rho2
    F_g = np.asarray(config.F_g, dtype=float)
    weight = live.astype(float)

    def rates_of(V):
        return _delivery_rates(H, V, C, config, interference, active)

    def value(r):
        return float(np.sum(np.where(live, r, 0.0)))

    r = rates_of(V)
    eta = np.where(live, r / F_g, 0.0)
    best = value(r)
    hist = [best]
    it = 0
    start = None
    warm_start = config.warm_start if warm_start is None else warm_start
    for it in range(1, max_outer + 1):
        coef = compute_coefficients(H[None], V[None], cluster_of, config.sigma2,
                                    interference=interference)
        sub = DeliverySubproblem(coef=coef, V0=V[None], eta0=eta, F_g=F_g, C=C,
                                 active=active, cluster_of=cluster_of, P_tot=config.P_tot,
                                 rho1=rho1, rho2=rho2, power_group=power_group, weight=weight)
        sol = solve_subproblem(sub, mode="accelerated", beta=config.beta, tol=inner_tol,
                               max_iter=max_inner, backtracking=True, raise_on_cap=False,
                               initial=start)
        if warm_start:
            start = sol.dual
        V_new = sol.primal.V[0]
        per = np.sum(np.abs(V_new) ** 2, axis=(1, 2))
        for p in np.unique(power_group):
            used = per[power_group == p].sum()
            if used > config.P_tot:
                V_new[power_group == p] *= math.sqrt(config.P_tot / used)
        gamma = 1.0
        accepted = False
        while gamma >= MIN_STEP:
            V_try = V + gamma * (V_new - V)
            r_try = rates_of(V_try)
            val = value(r_try)
            if val >= best:
                accepted = True
                break
            gamma *= 0.5
        if not accepted:
            break
        change = (val - best) / max(abs(best), 1e-12)
        V, r, best = V_try, r_try, val
        eta = np.where(live, r / F_g, 0.0)
        hist.append(best)
        if change < tol:
            break
    return DeliveryResult(V, eta, best, r, it, hist)


# Multi-file popularity extension ------------------------------------------------

@dataclass
class FileCatalog:
    """Per-cluster file sizes and request probabilities."""

    sizes: list[list[float]]
    popularity: list[list[float]]

    def __post_init__(self):
        if len(self.sizes) != len(self.popularity):
            raise ValueError("sizes and popularity must list the same clusters")
        for g, (s, p) in enumerate(zip(self.sizes, self.popularity)):
            if len(s) != len(p) or not s:
                raise ValueError(f"cluster {g}: sizes and popularities must match and be non-empty")
            if abs(sum(p) - 1.0) > 1e-12:
                raise ValueError(f"cluster {g}: popularities sum to {sum(p)}, not 1")
            if min(s) <= 0 or min(p) < 0:
                raise ValueError(f"cluster {g}: sizes must be positive, popularities non-negative")

    @property
    def G(self):
        return len(self.sizes)

    def tuples(self) -> list[tuple[int, ...]]:
        """Request tuples f in lexicographic order."""
        return [tuple(int(i) for i in idx)
                for idx in np.ndindex(*[len(s) for s in self.sizes])]

    def tuple_probability(self, f) -> float:
        return float(np.prod([self.popularity[g][fg] for g, fg in enumerate(f)]))


def multifile_model(config: ProblemConfig, catalog: FileCatalog, H_tf) -> CacheModel:
    """Flatten samples over (t, f); ``H_tf`` has shape (T, n_tuples, K, N, M)."""
    H_tf = np.asarray(H_tf, dtype=complex)
    T, nF, K = H_tf.shape[:3]
    tuples = catalog.tuples()
    if nF != len(tuples):
        raise ValueError(f"expected {len(tuples)} request tuples, channels carry {nF}")
    cluster_of = np.asarray(config.cluster_of)
    offsets = np.zeros(K, dtype=int)
    caps, owner = [], []
    for k in range(K):
        offsets[k] = len(caps)
        for size in catalog.sizes[cluster_of[k]]:
            caps.append(float(size))
            owner.append(k)
    S = T * nF
    F_sg = np.empty((S, config.G))
    weight = np.empty((S, config.G))
    index = np.empty((S, K), dtype=int)
    for t in range(T):
        for fi, f in enumerate(tuples):
            s = t * nF + fi
            for g in range(config.G):
                F_sg[s, g] = catalog.sizes[g][f[g]]
                weight[s, g] = catalog.popularity[g][f[g]]
            index[s] = offsets + np.array([f[cluster_of[k]] for k in range(K)])
    return CacheModel(
        H=H_tf.reshape((S,) + H_tf.shape[2:]), cluster_of=cluster_of,
        sigma2=np.asarray(config.sigma2, dtype=float), F_sg=F_sg, weight=weight,
        cache_index=index, cache_cap=np.asarray(caps), cache_owner=np.asarray(owner),
        P_tot=float(config.P_tot), C_tot=float(config.C_tot), G=config.G, d=config.d)


@dataclass
class MultiFileSolution:
    allocation: list[list[float]]   # allocation[k][file]
    solution: CacheSolution


def solve_multifile(config: ProblemConfig, catalog: FileCatalog, H_tf,
                    mode="accelerated") -> MultiFileSolution:
    """Popularity-weighted cache allocation over every file of every cluster."""
    if catalog.G != config.G:
        raise ValueError("catalog cluster count differs from config.G")
    model = multifile_model(config, catalog, H_tf)
    sol = run_sca(model, config, mode=mode)
    alloc = [[] for _ in range(len(config.cluster_of))]
    for j, k in enumerate(model.cache_owner):
        alloc[k].append(float(sol.primal.C[j]))
    return MultiFileSolution(alloc, sol)


# Integer rounding ----------------------------------------------------------------

def round_cache(C, C_tot, caps=None) -> np.ndarray:
    """Nearest-integer cache sizes that still respect the total budget.

    Entries rounded up by the largest amount are decremented first (lowest
    index on ties) until the budget holds.
    """
    C = np.asarray(C, dtype=float)
    out = np.floor(C + 0.5)
    if caps is not None:
        out = np.minimum(out, np.floor(np.asarray(caps, dtype=float)))
    out = np.maximum(out, 0.0)
    residual = out - C
    while out.sum() > C_tot + 1e-9:
        cand = np.where(out > 0, residual, -np.inf)
        k = int(np.argmax(cand))
        out[k] -= 1.0
        residual[k] -= 1.0
    return out.astype(int)


def allocation_json(C, path, key="C"):
    arr = np.asarray(C, dtype=float).tolist()
    with open(path, "w") as fh:
        json.dump({key: arr}, fh, indent=2)
        fh.write("\n")
