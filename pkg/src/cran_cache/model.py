"""Backhaul rate model: interference, mutual information, downloading sum-rate.

Rates are in nats throughout; ``RateReport.sum_rate_bits`` converts for
display. Array layouts used across the package:

    H    (T, K, N, M)  channel from the computation center to BS k
    V    (T, G, M, d)  multicast beamformer of cluster g
    eta  (T, G)        auxiliary per-unit rate
    C    (K,)          cache size per BS
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ProblemConfig

LN2 = math.log(2.0)


class DomainError(ValueError):
    pass


@dataclass
class PrimalState:
    C: np.ndarray
    V: np.ndarray
    eta: np.ndarray

    def copy(self) -> "PrimalState":
        return PrimalState(self.C.copy(), self.V.copy(), self.eta.copy())


@dataclass
class RateReport:
    mutual_info: np.ndarray      # (K, T)
    cluster_rate: np.ndarray     # (G, T), +inf when every member is fully cached
    sum_rate: np.ndarray         # (T,)
    fully_cached: np.ndarray     # (K,) bool
    infinite_cluster: np.ndarray = field(default=None)  # (G,) bool

    @property
    def sum_rate_bits(self) -> np.ndarray:
        return self.sum_rate / LN2


def interference_inverse(H_k, V_all, g_k, sigma2_k):
    """J_k = (sum_{g != g_k} H V_g V_g^H H^H + sigma2 I)^{-1} for one BS."""
    H_k = np.asarray(H_k, dtype=complex)
    if H_k.ndim == 0:
        H_k = H_k.reshape(1, 1)
    N = H_k.shape[0]
    cov = sigma2_k * np.eye(N, dtype=complex)
    for g, V in enumerate(V_all):
        if g == g_k:
            continue
        HV = H_k @ np.atleast_2d(np.asarray(V, dtype=complex))
        cov += HV @ HV.conj().T
    J = np.linalg.inv(cov)
    return 0.5 * (J + J.conj().T)


def mutual_information(H_k, V_gk, J_k) -> float:
    """log det(I_N + H V V^H H^H J), natural log."""
    H_k = np.atleast_2d(np.asarray(H_k, dtype=complex))
    V_gk = np.atleast_2d(np.asarray(V_gk, dtype=complex))
    J_k = np.atleast_2d(np.asarray(J_k, dtype=complex))
    if not (np.all(np.isfinite(H_k)) and np.all(np.isfinite(V_gk))):
        raise DomainError("non-finite channel or beamformer entries")
    HV = H_k @ V_gk
    # det(I_N + HV HV^H J) = det(I_d + HV^H J HV), Hermitian PSD argument
    inner = np.eye(HV.shape[1]) + HV.conj().T @ J_k @ HV
    inner = 0.5 * (inner + inner.conj().T)
    sign, logdet = np.linalg.slogdet(inner)
    return float(max(logdet, 0.0))


def _hermitian(X):
    return 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))


def received_products(H, V):
    """Y[t, k, g] = H[t, k] @ V[t, g], shape (T, K, G, N, d)."""
    return np.einsum("tknm,tgmd->tkgnd", H, V)


def all_mutual_information(H, V, cluster_of, sigma2, interference=True):
    """Mutual information for every (t, k); returns shape (T, K)."""
    H = np.asarray(H, dtype=complex)
    V = np.asarray(V, dtype=complex)
    T, K, N, _ = H.shape
    cluster_of = np.asarray(cluster_of)
    Y = received_products(H, V)
    own = Y[:, np.arange(K), cluster_of]                       # (T, K, N, d)
    own_cov = own @ np.conj(np.swapaxes(own, -1, -2))
    noise = np.asarray(sigma2, dtype=float)[None, :, None, None] * np.eye(N)
    if interference:
        total = np.einsum("tkgnd,tkgmd->tknm", Y, Y.conj())
        interf = total - own_cov + noise
    else:
        interf = np.broadcast_to(noise, own_cov.shape).astype(complex)
    _, ld_all = np.linalg.slogdet(_hermitian(interf + own_cov))
    _, ld_int = np.linalg.slogdet(_hermitian(interf))
    return np.maximum(ld_all - ld_int, 0.0)


def rate_factors(C, F_of_bs, atol=1e-9):
    """F/(F - C) per BS with the fully-cached sentinel (factor = inf)."""
    C = np.asarray(C, dtype=float)
    F = np.asarray(F_of_bs, dtype=float)
    if np.any(C > F + atol):
        bad = int(np.argmax(C - F))
        raise DomainError(f"cache C[{bad}]={C[bad]} exceeds file size {F[bad]}")
    if np.any(C < -atol):
        raise DomainError("negative cache size")
    full = C >= F - atol
    with np.errstate(divide="ignore"):
        factor = np.where(full, np.inf, F / np.where(full, 1.0, F - C))
    return factor, full


def cluster_rates(mi, C, F_of_bs, members):
    """Per-cluster rate min_k F/(F-C_k) * MI over non-fully-cached members.

    ``mi`` has shape (T, K); returns (G, T) rates and a (K,) fully-cached mask.
    """
    factor, full = rate_factors(C, F_of_bs)
    G = len(members)
    T = mi.shape[0]
    rates = np.full((G, T), np.inf)
    for g, ks in enumerate(members):
        live = [k for k in ks if not full[k]]
        if live:
            rates[g] = np.min(mi[:, live] * factor[live][None, :], axis=1)
    return rates, full


def sum_rate(config: ProblemConfig, H, primal: PrimalState, interference=True,
             time_share=1.0) -> RateReport:
    """Downloading sum-rate of every sample for a given cache vector and beamformers.

    ``time_share`` scales every cluster rate (1/G for time-division delivery).
    """
    H = getattr(H, "H", H)
    mi = all_mutual_information(H, primal.V, config.cluster_of, config.sigma2, interference)
    rates, full = cluster_rates(mi, primal.C, config.F_of_bs(), config.members)
    rates = rates * time_share
    infinite = np.all(np.isinf(rates), axis=1)
    return RateReport(
        mutual_info=mi.T.copy(), cluster_rate=rates, sum_rate=rates.sum(axis=0),
        fully_cached=full, infinite_cluster=infinite,
    )


@dataclass
class Violation:
    constraint: str
    index: tuple
    magnitude: float


def check_feasibility(config: ProblemConfig, primal: PrimalState, tol=1e-6) -> list[Violation]:
    """List every violated power, cache-budget and cache-box constraint."""
    out = []
    C = np.asarray(primal.C, dtype=float)
    F = np.asarray(config.F_of_bs())
    total = float(C.sum())
    if total > config.C_tot + tol:
        out.append(Violation("cache_budget", (), total - config.C_tot))
    for k in np.flatnonzero(C < -tol):
        out.append(Violation("cache_lower", (int(k),), float(-C[k])))
    for k in np.flatnonzero(C > F + tol):
        out.append(Violation("cache_upper", (int(k),), float(C[k] - F[k])))
    power = np.sum(np.abs(primal.V) ** 2, axis=(1, 2, 3))
    for t in np.flatnonzero(power > config.P_tot + tol):
        out.append(Violation("power", (int(t),), float(power[t] - config.P_tot)))
    return out
