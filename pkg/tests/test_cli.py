import json
import os

import numpy as np
import pytest

from cran_cache.channels import load_channels
from cran_cache.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TINY = os.path.join(ROOT, "configs", "tiny.json")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.split(), err


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_generate_channels(tmp_path, capsys):
    code, paths, _ = run(capsys, "generate-channels", "--config", TINY, "--seed", 9,
                         "--T", 2, "--stream", 1, "--out", tmp_path)
    assert code == 0
    ch = load_channels(paths[0])
    assert ch.H.shape == (2, 4, 2, 4) and ch.seed == 9 and ch.stream == 1


def test_solve_cache_then_round(tmp_path, capsys):
    code, paths, _ = run(capsys, "solve-cache", "--config", TINY, "--seed", 1,
                         "--out", tmp_path, "--trace")
    assert code == 0
    alloc = json.loads(open(paths[0]).read())
    assert sum(alloc["C"]) <= 40.0 + 1e-6
    assert min(alloc["C"]) >= -1e-9
    assert sum(alloc["C_rounded"]) <= 40
    header = open(paths[1]).readline().strip().split(",")
    assert "objective" in header
    code, rounded, _ = run(capsys, "round-cache", paths[0], "--config", TINY,
                           "--out", tmp_path)
    assert code == 0
    assert json.loads(open(rounded[0]).read())["C"] == alloc["C_rounded"]


def test_fixed_beamformer_solve(tmp_path, capsys):
    code, paths, _ = run(capsys, "solve-cache", "--config", TINY, "--seed", 1,
                         "--fix-beamformers", "--out", tmp_path)
    assert code == 0
    assert len(json.loads(open(paths[0]).read())["C"]) == 4


def test_solve_mcmb_from_saved_channels(tmp_path, capsys):
    _, chans, _ = run(capsys, "generate-channels", "--config", TINY, "--seed", 4,
                      "--out", tmp_path)
    code, paths, _ = run(capsys, "solve-mcmb", "--config", TINY, "--channels", chans[0],
                         "--realization", 1, "--out", tmp_path)
    assert code == 0
    res = json.loads(open(paths[0]).read())
    V = np.array(res["V_real"]) + 1j * np.array(res["V_imag"])
    assert V.shape == (2, 4, 2)
    assert np.sum(np.abs(V) ** 2) <= 40.0 * (1 + 1e-9)
    assert res["sum_rate"] > 0


def test_baselines_write_csv_reports(tmp_path, capsys):
    code, paths, _ = run(capsys, "run-baselines", "--config", TINY, "--schemes", "uniform",
                         "--format", "csv", "--out", tmp_path)
    assert code == 0
    assert os.path.basename(paths[0]) == "uniform.csv"
    lines = open(paths[0]).read().splitlines()
    assert lines[0] == "realization,sum_rate,cdf_rate,cdf_probability"
    assert len(lines) == 4


def test_reruns_are_bit_identical(tmp_path, capsys):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        _, paths, _ = run(capsys, "run-experiment", "--config", TINY, "--seed", 3,
                          "--trace", "--out", out)
        outputs.append({os.path.basename(p): read_bytes(p) for p in paths})
    assert outputs[0].keys() == {"proposed.json", "allocation.json", "trace.csv"}
    assert outputs[0] == outputs[1]


def test_usage_error_is_json(capsys):
    code, _, err = run(capsys, "solve-cache", "--seed", -3)
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "UsageError" and "seed" in payload["message"]


def test_runtime_error_is_json(tmp_path, capsys):
    code, _, err = run(capsys, "solve-mcmb", "--config", TINY, "--realization", 99,
                       "--out", tmp_path)
    assert code == 1
    payload = json.loads(err)
    assert payload["command"] == "solve-mcmb" and "realization" in payload["message"]


def test_missing_config_is_reported(tmp_path, capsys):
    code, _, err = run(capsys, "generate-channels", "--config", tmp_path / "nope.json")
    assert code == 1
    assert "nope.json" in json.loads(err)["message"]
