import json
import math

import pytest

from cran_cache.config import (ConfigError, ProblemConfig, desk_config, load_config,
                               paper_config, paper_noise_power, save_config)


def small(**kw):
    base = dict(G=2, K=4, cluster_of=[0, 0, 1, 1], M=4, N=2, d=2, P_tot=1.0, C_tot=10.0,
                F_g=[10.0, 10.0], sigma2=[1.0] * 4, T=3)
    base.update(kw)
    return ProblemConfig(**base)


def test_paper_scenario_values():
    cfg, exp = paper_config()
    assert (cfg.G, cfg.K, cfg.M, cfg.N, cfg.d, cfg.T) == (4, 12, 20, 2, 2, 100)
    assert cfg.P_tot == 40.0 and cfg.C_tot == 120.0 and cfg.F_g == [100.0] * 4
    assert (cfg.rho1, cfg.rho2, cfg.rho3, cfg.beta) == (1e5, 1e4, 1.0, 1.0)
    assert cfg.tol_inner == 1e-3 and cfg.tol_outer == 1e-2 and cfg.outer_window == 100
    assert exp.distances[:3] == [160.0, 260.0, 360.0]
    assert exp.distances[-3:] == [240.0, 320.0, 400.0]
    assert exp.antenna_gain_db == 17.0 and exp.eval_realizations == 400
    assert cfg.members == [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]]


def test_noise_power_of_reference_link_budget():
    # -150 dBm/Hz over 20 MHz is -76.99 dBm
    assert paper_noise_power() == pytest.approx(1.995e-11, rel=1e-3)


def test_desk_scenario_keeps_geometry():
    cfg, exp = desk_config()
    ref, _ = paper_config()
    assert (cfg.M, cfg.T, cfg.outer_window) == (8, 20, 10)
    assert cfg.K == ref.K and cfg.sigma2 == ref.sigma2 and exp.eval_realizations == 40


@pytest.mark.parametrize("change, match", [
    (dict(M=2, N=2, d=2), "M > N"),
    (dict(d=1), "d must equal"),
    (dict(cluster_of=[0, 0, 0, 0]), "every cluster"),
    (dict(cluster_of=[0, 1, 1]), "cluster_of has"),
    (dict(P_tot=0.0), "P_tot"),
    (dict(C_tot=-1.0), "C_tot"),
    (dict(rho3=0.0), "prox"),
    (dict(F_g=[10.0]), "F_g has"),
    (dict(sigma2=[1.0, 1.0, 1.0, 0.0]), "noise"),
])
def test_invalid_configs_rejected(change, match):
    with pytest.raises(ConfigError, match=match):
        small(**change)


def test_config_roundtrip_and_fingerprint(tmp_path):
    cfg, exp = desk_config()
    path = tmp_path / "c.json"
    save_config(path, cfg, exp)
    cfg2, exp2 = load_config(path)
    assert cfg2 == cfg and exp2 == exp
    assert cfg2.fingerprint() == cfg.fingerprint()
    assert cfg.replace(seed=1).fingerprint() != cfg.fingerprint()


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"G": 1}))
    with pytest.raises(ConfigError, match="missing keys"):
        load_config(partial)


def test_equal_power_amplitude_of_reference_scenario():
    cfg, _ = paper_config()
    assert math.sqrt(cfg.P_tot / (cfg.G * cfg.M * cfg.d)) == 0.5
