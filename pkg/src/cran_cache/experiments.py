"""Scheme comparisons on evaluation channel draws, and report serialization.

Every scheme fixes a cache vector (optimized or not), then designs the
content-delivery beamformers independently on each evaluation realization.
Rates in reports are bits/s/Hz.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channels import sample_channels
from .config import ExperimentConfig, ProblemConfig
from .model import all_mutual_information, cluster_rates
from .sca import solve_cache_allocation, solve_mcmb

LN2 = math.log(2.0)
TRAIN_STREAM = 0
EVAL_STREAM = 1
SCHEMES = ("proposed", "uniform", "timedivision", "ignore_interference")


class ReportError(ValueError):
    pass


@dataclass
class ExperimentReport:
    scheme: str
    rates: np.ndarray                   # (n,) bits/s/Hz per realization
    cache: np.ndarray                   # (K,)
    fingerprint: str
    seeds: dict
    failures: list = field(default_factory=list)

    @property
    def average(self) -> float:
        return float(np.mean(self.rates))

    def cdf(self):
        """Empirical CDF support points and values (right-continuous steps)."""
        x = np.sort(np.asarray(self.rates, dtype=float))
        uniq = np.unique(x)
        counts = np.searchsorted(x, uniq, side="right")
        return uniq, counts / len(x)

    def to_dict(self) -> dict:
        x, p = self.cdf()
        return {
            "scheme": self.scheme,
            "rates": [float(r) for r in self.rates],
            "average": self.average,
            "cdf": [[float(a), float(b)] for a, b in zip(x, p)],
            "cache": [float(c) for c in self.cache],
            "fingerprint": self.fingerprint,
            "seeds": dict(self.seeds),
            "failures": list(self.failures),
        }

    @classmethod
    def from_dict(cls, data) -> "ExperimentReport":
        return cls(data["scheme"], np.asarray(data["rates"], dtype=float),
                   np.asarray(data["cache"], dtype=float), data["fingerprint"],
                   dict(data["seeds"]), [list(f) for f in data.get("failures", [])])

    def __eq__(self, other):
        if not isinstance(other, ExperimentReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


# Per-realization delivery ------------------------------------------------------------

def _mcmb_kwargs(exp: ExperimentConfig):
    return dict(rho1=exp.mcmb_rho1, rho2=exp.mcmb_rho2, tol=exp.mcmb_tol,
                max_outer=exp.mcmb_max_outer, inner_tol=exp.mcmb_inner_tol)


def true_rate(config: ProblemConfig, H, V, C) -> float:
    """Downloading sum-rate (nats) of beamformers V under full interference."""
    mi = all_mutual_information(H[None], V[None], config.cluster_of, config.sigma2)
    F_bs = np.asarray(config.F_g, dtype=float)[np.asarray(config.cluster_of)]
    rates, _ = cluster_rates(mi, np.asarray(C, dtype=float), F_bs, config.members)
    rates = rates[:, 0]
    return float(np.sum(rates[np.isfinite(rates)]))


def _deliver(job):
    scheme, config, H, C, kw = job
    if scheme == "timedivision":
        res = solve_mcmb(config, H, C, interference=False, per_cluster_power=True, **kw)
        return res.sum_rate / config.G
    if scheme == "ignore_interference":
        res = solve_mcmb(config, H, C, interference=False, **kw)
        return true_rate(config, H, res.V, C)
    return solve_mcmb(config, H, C, **kw).sum_rate


def deliver_all(scheme, config, channels_eval, C, exp: ExperimentConfig, workers=1):
    """Sum rates (bits) per evaluation realization plus recorded failures."""
    H = np.asarray(getattr(channels_eval, "H", channels_eval))
    jobs = [(scheme, config, H[t], C, _mcmb_kwargs(exp)) for t in range(H.shape[0])]
    rates, failures = [], []
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_safe_deliver, jobs))
    else:
        outcomes = [_safe_deliver(j) for j in jobs]
    for t, (ok, value) in enumerate(outcomes):
        if ok:
            rates.append(value / LN2)
        else:
            failures.append([t, value])
    return np.asarray(rates), failures


def _safe_deliver(job):
    try:
        return True, _deliver(job)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return False, f"{type(exc).__name__}: {exc}"


def _report(scheme, config, C, rates, failures, seeds):
    return ExperimentReport(scheme, rates, np.asarray(C, dtype=float), config.fingerprint(),
                            dict(seeds), failures)


def _seeds(channels_train, channels_eval):
    seeds = {}
    if channels_train is not None:
        seeds["train"] = int(getattr(channels_train, "seed", -1))
    seeds["eval"] = int(getattr(channels_eval, "seed", -1))
    return seeds


def _check_dims(config, *sets):
    for ch in sets:
        if ch is None:
            continue
        H = np.asarray(getattr(ch, "H", ch))
        if H.shape[1:] != (config.K, config.N, config.M):
            raise ValueError(f"channel shape {H.shape[1:]} does not match config "
                             f"(K, N, M) = {(config.K, config.N, config.M)}")


# Schemes ------------------------------------------------------------------------------

def run_proposed(config, channels_train, channels_eval, exp=None, workers=1, solution=None):
    """Optimized cache sizes, then per-realization delivery beamforming."""
    exp = exp or ExperimentConfig()
    _check_dims(config, channels_train, channels_eval)
    sol = solution or solve_cache_allocation(config, channels_train)
    C = sol.primal.C
    rates, failures = deliver_all("proposed", config, channels_eval, C, exp, workers)
    return _report("proposed", config, C, rates, failures, _seeds(channels_train, channels_eval))


def run_uniform_baseline(config, channels_eval, exp=None, workers=1):
    """Equal cache split C_tot / K."""
    exp = exp or ExperimentConfig()
    _check_dims(config, channels_eval)
    C = np.full(config.K, config.C_tot / config.K)
    rates, failures = deliver_all("uniform", config, channels_eval, C, exp, workers)
    return _report("uniform", config, C, rates, failures, _seeds(None, channels_eval))


def _interference_free(config, exp: ExperimentConfig):
    if exp.interference_free_rho2 is None:
        return config
    return config.replace(rho2=exp.interference_free_rho2)


def run_timedivision_baseline(config, channels_train, channels_eval, exp=None, workers=1):
    """Clusters served one at a time with full power, each for 1/G of the time.

    The cache sizes are optimized jointly under C_tot with interference-free
    rates; the 1/G scaling does not change the optimal cache split.
    """
    exp = exp or ExperimentConfig()
    _check_dims(config, channels_train, channels_eval)
    design = _interference_free(config, exp)
    sol = solve_cache_allocation(design, channels_train, interference=False, per_cluster_power=True)
    C = sol.primal.C
    rates, failures = deliver_all("timedivision", design, channels_eval, C, exp, workers)
    return _report("timedivision", config, C, rates, failures,
                   _seeds(channels_train, channels_eval))


def run_ignore_interference_baseline(config, channels_train, channels_eval, exp=None, workers=1):
    """Cache sizes and beamformers designed as if clusters did not interfere."""
    exp = exp or ExperimentConfig()
    _check_dims(config, channels_train, channels_eval)
    design = _interference_free(config, exp)
    sol = solve_cache_allocation(design, channels_train, interference=False)
    C = sol.primal.C
    rates, failures = deliver_all("ignore_interference", design, channels_eval, C, exp, workers)
    return _report("ignore_interference", config, C, rates, failures,
                   _seeds(channels_train, channels_eval))


def run_scheme(scheme, config, channels_train, channels_eval, exp=None, workers=1):
    if scheme == "proposed":
        return run_proposed(config, channels_train, channels_eval, exp, workers)
    if scheme == "uniform":
        return run_uniform_baseline(config, channels_eval, exp, workers)
    if scheme == "timedivision":
        return run_timedivision_baseline(config, channels_train, channels_eval, exp, workers)
    if scheme == "ignore_interference":
        return run_ignore_interference_baseline(config, channels_train, channels_eval, exp, workers)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")


def experiment_channels(config, exp: ExperimentConfig, seed):
    """Training draws (stream 0) and evaluation draws (stream 1) for one seed."""
    train = sample_channels(config, exp.distances, exp.antenna_gain_db, seed, stream=TRAIN_STREAM)
    evals = sample_channels(config, exp.distances, exp.antenna_gain_db, seed,
                            T=exp.eval_realizations, stream=EVAL_STREAM)
    return train, evals


# Serialization ------------------------------------------------------------------------

def emit_report(report: ExperimentReport, path, fmt="json", scale=1.0):
    """Write a report as JSON or CSV; ``scale`` converts bits/s/Hz (e.g. x bandwidth)."""
    if len(report.rates) == 0:
        raise ReportError(f"{path}: report for scheme '{report.scheme}' has no realizations")
    if fmt not in ("json", "csv"):
        raise ReportError(f"unknown report format {fmt!r}")
    scaled = report
    if scale != 1.0:
        scaled = ExperimentReport(report.scheme, np.asarray(report.rates) * scale, report.cache,
                                  report.fingerprint, report.seeds, report.failures)
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "json":
                data = scaled.to_dict()
                data["scale"] = scale
                json.dump(data, fh, indent=2, sort_keys=True)
                fh.write("\n")
            else:
                x = np.sort(np.asarray(scaled.rates, dtype=float))
                p = np.searchsorted(x, x, side="right") / len(x)
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["realization", "sum_rate", "cdf_rate", "cdf_probability"])
                for i, r in enumerate(scaled.rates):
                    w.writerow([i, repr(float(r)), repr(float(x[i])), repr(float(p[i]))])
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    return os.fspath(path)


def load_report(path) -> ExperimentReport:
    with open(path) as fh:
        return ExperimentReport.from_dict(json.load(fh))
