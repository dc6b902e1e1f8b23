"""Quadratic convex upper bounds of the per-BS rate constraints.

For every (sample, BS) pair the rate constraint
``(F - C) eta - log det(I + H V V^H H^H J) <= 0`` is majorized around an
expansion point by a convex quadratic in (C, eta, V). ``Coefficients``
stores the matrices for a whole batch; ``eval_f`` / ``eval_h`` evaluate the
bound for one pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COND_LIMIT = 1e12


class ConditioningError(ArithmeticError):
    pass


def _ct(X):
    return np.conj(np.swapaxes(X, -1, -2))


def _herm(X):
    return 0.5 * (X + _ct(X))


@dataclass
class Coefficients:
    """Batched expansion coefficients, leading axes (S, K).

    ``b_hat`` excludes the ``(eta_i + C_i)^2 / 2`` term; ``anchor`` holds
    ``eta_i + C_i`` so the cache-side constant is ``b_hat + anchor**2 / 2``.
    ``own_only`` marks the interference-free model, in which A only acts on
    the BS's own cluster beamformer.
    """

    U: np.ndarray        # (S, K, N, d)
    Q: np.ndarray        # (S, K, d, d)
    A: np.ndarray        # (S, K, M, M)
    B: np.ndarray        # (S, K, d, M)
    b_hat: np.ndarray    # (S, K)
    anchor: np.ndarray   # (S, K)
    cluster_of: np.ndarray
    own_only: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def b(self):
        return self.b_hat + 0.5 * self.anchor ** 2

    def flat(self, name):
        """Reshaped views used by the hot loops, computed once."""
        if name not in self._cache:
            S, K, M, _ = self.A.shape
            if name == "A":
                self._cache[name] = self.A.reshape(S, K, M * M)
            elif name == "AT":      # vec(A^T), so tr(A P) = AT . vec(P)
                self._cache[name] = np.swapaxes(self.A, -1, -2).reshape(S, K, M * M)
            elif name == "BT":      # vec(B^T), so tr(B V) = BT . vec(V)
                self._cache[name] = np.swapaxes(self.B, -1, -2).reshape(S, K, -1)
            elif name == "BH":      # B^H flattened, (S, K, M*d)
                self._cache[name] = np.conj(np.swapaxes(self.B, -1, -2)).reshape(S, K, -1)
        return self._cache[name]


def compute_coefficients(H, V, cluster_of, sigma2, interference=True, anchor=None) -> Coefficients:
    """Expansion coefficients for every (s, k) at beamformers ``V``.

    H: (S, K, N, M), V: (S, G, M, d). ``anchor`` is eta_i + C_i per (s, k);
    pass None for the content-delivery variant without cache terms.
    """
    H = np.asarray(H, dtype=complex)
    V = np.asarray(V, dtype=complex)
    S, K, N, M = H.shape
    d = V.shape[-1]
    cluster_of = np.asarray(cluster_of)
    sigma2 = np.asarray(sigma2, dtype=float)
    Y = np.einsum("sknm,sgmd->skgnd", H, V)
    own = Y[:, np.arange(K), cluster_of]                       # (S, K, N, d)
    noise = sigma2[None, :, None, None] * np.eye(N)
    if interference:
        X = np.einsum("skgnd,skgmd->sknm", Y, Y.conj()) + noise
    else:
        X = own @ _ct(own) + noise
    X = _herm(X)
    U = np.linalg.solve(X, own)
    Q = np.eye(d) - _ct(U) @ own
    Q = _herm(Q)
    cond = np.linalg.cond(Q)
    if not np.all(np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        s, k = np.unravel_index(int(np.nanargmax(np.where(np.isfinite(cond), cond, np.inf))), cond.shape)
        raise ConditioningError(f"I - U^H H V is near singular at sample {s}, BS {k}")
    UhH = _ct(U) @ H                                           # (S, K, d, M)
    QiUhH = np.linalg.solve(Q, UhH)
    A = _herm(_ct(UhH) @ QiUhH)
    B = -QiUhH
    rhs = np.eye(d) + sigma2[None, :, None, None] * (_ct(U) @ U)
    tr = np.real(np.trace(np.linalg.solve(Q, rhs), axis1=-2, axis2=-1))
    _, logdet_q = np.linalg.slogdet(Q)
    b_hat = tr + logdet_q - d
    if anchor is None:
        anchor = np.zeros((S, K))
    return Coefficients(U, Q, A, B, b_hat, np.asarray(anchor, dtype=float),
                        cluster_of, own_only=not interference)


def quadratic_terms(coef: Coefficients, V):
    """sum_g tr(V_g^H A V_g) + 2 Re tr(B V_gk) for every (s, k)."""
    V = np.asarray(V, dtype=complex)
    S, G, M, d = V.shape
    Vflat = V.reshape(S, G, M * d)
    # tr(B_sk V_{s,g}) for all g, then pick the own cluster
    lin_all = coef.flat("BT") @ np.swapaxes(Vflat, 1, 2)         # (S, K, G)
    lin = np.take_along_axis(lin_all, coef.cluster_of[None, :, None], axis=2)[..., 0]
    if coef.own_only:
        Vown = V[:, coef.cluster_of]                               # (S, K, M, d)
        quad = np.sum(Vown.conj() * (coef.A @ Vown), axis=(2, 3))
    else:
        W = np.moveaxis(V, 1, 2).reshape(S, M, G * d)
        P = W @ np.conj(np.swapaxes(W, 1, 2))                      # (S, M, M)
        quad = (coef.flat("AT") @ P.reshape(S, M * M, 1))[..., 0]
    return np.real(quad) + 2.0 * np.real(lin)


def f_values(coef: Coefficients, C_sk, eta_sk, V, F_sk):
    """Cache-side surrogate for every (s, k); C, eta, F given per (s, k)."""
    psi = 0.5 * (eta_sk ** 2 + C_sk ** 2) + F_sk * eta_sk - coef.anchor * (eta_sk + C_sk)
    return quadratic_terms(coef, V) + psi + coef.b


def h_values(coef: Coefficients, V):
    return quadratic_terms(coef, V) + coef.b_hat


# Single-pair interface -------------------------------------------------------

@dataclass
class PairCoefficients:
    U: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    B: np.ndarray
    b: float
    g_k: int
    own_only: bool = False


def _pair(H_kt, V_all, g_k, sigma2_k, anchor, interference):
    H = np.atleast_2d(np.asarray(H_kt, dtype=complex))
    V = np.asarray([np.atleast_2d(np.asarray(v, dtype=complex)) for v in V_all])
    if V.ndim == 2:
        V = V[:, :, None]
    coef = compute_coefficients(H[None, None], V[None], [g_k], [sigma2_k],
                                interference=interference,
                                anchor=None if anchor is None else [[anchor]])
    b = coef.b if anchor is not None else coef.b_hat
    return PairCoefficients(coef.U[0, 0], coef.Q[0, 0], coef.A[0, 0], coef.B[0, 0],
                            float(b[0, 0]), int(g_k), coef.own_only)


def expansion_coefficients(H_kt, V_all_i, g_k, sigma2_k, eta_i, C_i, F_gk=None,
                           interference=True) -> PairCoefficients:
    """U, Q, A, B, b for one (k, t) at the expansion point (C_i, eta_i, V_all_i)."""
    return _pair(H_kt, V_all_i, g_k, sigma2_k, eta_i + C_i, interference)


def mcmb_coefficients(H_k, V_all_i, g_k, sigma2_k, interference=True) -> PairCoefficients:
    """Coefficients of the content-delivery bound: b omits the cache-side term."""
    return _pair(H_k, V_all_i, g_k, sigma2_k, None, interference)


def _pair_quadratic(coef: PairCoefficients, V_all):
    V_all = [np.atleast_2d(np.asarray(v, dtype=complex)) for v in V_all]
    if coef.own_only:
        group = [V_all[coef.g_k]]
    else:
        group = V_all
    quad = sum(np.real(np.trace(v.conj().T @ coef.A @ v)) for v in group)
    lin = 2.0 * np.real(np.trace(coef.B @ V_all[coef.g_k]))
    return quad + lin


def eval_f(coef: PairCoefficients, C_k, eta, V_all, F_gk, eta_i, C_i) -> float:
    psi = 0.5 * (eta ** 2 + C_k ** 2) + F_gk * eta - (eta_i + C_i) * (eta + C_k)
    return float(_pair_quadratic(coef, V_all) + psi + coef.b)


def eval_h(coef: PairCoefficients, V_all) -> float:
    return float(_pair_quadratic(coef, V_all) + coef.b)
