"""Problem instance configuration and the two stock geometries."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


# Link-budget constants of the reference scenario.
NOISE_PSD_DBM_HZ = -150.0
BANDWIDTH_HZ = 20e6
ANTENNA_GAIN_DBI = 17.0

PAPER_DISTANCES = (
    (160.0, 260.0, 360.0),
    (200.0, 280.0, 360.0),
    (160.0, 280.0, 400.0),
    (240.0, 320.0, 400.0),
)


@dataclass
class ProblemConfig:
    """All scalars defining one cache-allocation instance.

    ``cluster_of[k]`` is the cluster index of BS ``k``; ``F_g[g]`` the file
    size requested by cluster ``g`` and ``sigma2[k]`` the noise power at BS
    ``k`` in watts. Cache sizes and file sizes share one content unit.
    """

    G: int
    K: int
    cluster_of: list[int]
    M: int
    N: int
    d: int
    P_tot: float
    C_tot: float
    F_g: list[float]
    sigma2: list[float]
    T: int
    rho1: float = 1e5
    rho2: float = 1e4
    rho3: float = 1.0
    beta: float = 1.0
    tol_inner: float = 1e-3
    tol_outer: float = 1e-2
    outer_window: int = 100
    seed: int = 0
    max_inner: int = 100_000
    max_outer: int = 2000
    backtracking: bool = False
    warm_start: bool = False        # start each inner solve from the previous multipliers

    def __post_init__(self):
        self.cluster_of = [int(g) for g in self.cluster_of]
        self.F_g = [float(f) for f in self.F_g]
        self.sigma2 = [float(s) for s in self.sigma2]
        self.validate()

    def validate(self):
        if not self.M > self.N >= 1:
            raise ConfigError(f"need M > N >= 1, got M={self.M}, N={self.N}")
        if self.d != min(self.M, self.N):
            raise ConfigError(f"d must equal min(M, N) = {min(self.M, self.N)}, got {self.d}")
        if len(self.cluster_of) != self.K:
            raise ConfigError(f"cluster_of has {len(self.cluster_of)} entries for K={self.K}")
        if sorted(set(self.cluster_of)) != list(range(self.G)):
            raise ConfigError("cluster_of must use every cluster index 0..G-1 at least once")
        if len(self.F_g) != self.G:
            raise ConfigError(f"F_g has {len(self.F_g)} entries for G={self.G}")
        if len(self.sigma2) != self.K:
            raise ConfigError(f"sigma2 has {len(self.sigma2)} entries for K={self.K}")
        if self.P_tot <= 0:
            raise ConfigError("P_tot must be positive")
        if self.C_tot < 0:
            raise ConfigError("C_tot must be non-negative")
        if min(self.F_g) <= 0 or min(self.sigma2) <= 0:
            raise ConfigError("file sizes and noise powers must be positive")
        if min(self.rho1, self.rho2, self.rho3) <= 0:
            raise ConfigError("prox weights rho1, rho2, rho3 must be positive")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.T < 1:
            raise ConfigError("T must be at least 1")

    @property
    def members(self) -> list[list[int]]:
        """BS indices of each cluster, in increasing order."""
        out = [[] for _ in range(self.G)]
        for k, g in enumerate(self.cluster_of):
            out[g].append(k)
        return out

    def F_of_bs(self) -> list[float]:
        return [self.F_g[g] for g in self.cluster_of]

    def replace(self, **changes) -> "ProblemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        missing = {f.name for f in dataclasses.fields(cls)
                   if f.default is dataclasses.MISSING} - set(data)
        if missing:
            raise ConfigError(f"config is missing keys: {sorted(missing)}")
        return cls(**{k: v for k, v in data.items() if k in names})

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """Keys consumed by the experiment runner on top of ProblemConfig."""

    distances: list[float] = field(default_factory=list)
    antenna_gain_db: float = ANTENNA_GAIN_DBI
    eval_realizations: int = 400
    baselines: list[str] = field(
        default_factory=lambda: ["uniform", "timedivision", "ignore_interference"])
    mcmb_rho1: float | None = None
    mcmb_rho2: float | None = None
    mcmb_tol: float = 1e-3
    mcmb_max_outer: int = 200
    mcmb_inner_tol: float = 1e-6
    # Beamformer prox weight for the interference-free designs; their surrogate
    # curvature grows with the SNR, so a weight tuned for the interference case
    # can leave the dual badly conditioned. None keeps the problem's rho2.
    interference_free_rho2: float | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def load_config(path) -> tuple[ProblemConfig, ExperimentConfig]:
    """Read a JSON config holding ProblemConfig keys plus experiment keys."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at char {exc.pos}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return ProblemConfig.from_dict(data), ExperimentConfig.from_dict(data)


def save_config(path, config: ProblemConfig, experiment: ExperimentConfig | None = None):
    data = config.to_dict()
    if experiment is not None:
        data.update(dataclasses.asdict(experiment))
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def paper_noise_power() -> float:
    dbm = NOISE_PSD_DBM_HZ + 10.0 * math.log10(BANDWIDTH_HZ)
    return 10.0 ** ((dbm - 30.0) / 10.0)


def paper_config(**overrides) -> tuple[ProblemConfig, ExperimentConfig]:
    """Full-scale reference scenario: 4 clusters of 3 BSs, M=20, N=2, T=100."""
    distances = [d for cluster in PAPER_DISTANCES for d in cluster]
    K = len(distances)
    cfg = dict(
        G=4, K=K, cluster_of=[k // 3 for k in range(K)], M=20, N=2, d=2,
        P_tot=40.0, C_tot=120.0, F_g=[100.0] * 4, sigma2=[paper_noise_power()] * K,
        T=100, rho1=1e5, rho2=1e4, rho3=1.0, beta=1.0, tol_inner=1e-3,
        tol_outer=1e-2, outer_window=100,
    )
    cfg.update(overrides)
    return ProblemConfig(**cfg), ExperimentConfig(distances=distances, eval_realizations=400)


def desk_config(**overrides) -> tuple[ProblemConfig, ExperimentConfig]:
    """Reduced reference scenario that runs in minutes on one core.

    Same geometry and link budget with M=8, T=20, a 10-iteration outer
    window, a looser inner tolerance and prox weights tuned for run time.
    """
    exp_keys = {f.name for f in dataclasses.fields(ExperimentConfig)}
    exp_over = {k: overrides.pop(k) for k in list(overrides) if k in exp_keys}
    base, exp = paper_config()
    cfg = dict(M=8, T=20, outer_window=10, tol_outer=1e-2, tol_inner=1e-4,
               rho1=DESK_RHO1, rho2=DESK_RHO2, rho3=DESK_RHO3, max_outer=300,
               backtracking=True, warm_start=True)
    cfg.update(overrides)
    exp = dataclasses.replace(exp, **{"eval_realizations": 40, "mcmb_inner_tol": 1e-4,
                                      "interference_free_rho2": 1e2, "mcmb_tol": 1e-5,
                                      "mcmb_max_outer": 1000, **exp_over})
    return base.replace(**cfg), exp


DESK_RHO1 = 3e3
DESK_RHO2 = 1.0
DESK_RHO3 = 1.0
