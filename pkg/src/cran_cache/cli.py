"""Batch command-line interface.

Every subcommand writes deterministic files into ``--out``; failures print a
JSON object ``{"error": ..., "message": ..., "command": ...}`` on stderr and
exit with a nonzero status.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .channels import load_channels, save_channels, sample_channels
from .config import BANDWIDTH_HZ, desk_config, load_config
from .experiments import (SCHEMES, emit_report, experiment_channels, run_proposed,
                          run_scheme)
from .sca import allocation_json, round_cache, solve_cache_allocation, solve_mcmb

LN2 = np.log(2.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _common(p, fmt=False):
    p.add_argument("--config", help="JSON config (defaults to the desk-scale scenario)")
    p.add_argument("--seed", type=_u64, default=None, help="channel seed (default: config seed)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--trace", action="store_true", help="also write per-iteration traces")
    p.add_argument("--timing", action="store_true",
                   help="fill wall-clock columns in traces (makes files run-dependent)")
    if fmt:
        p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser():
    parser = _Parser(prog="cran-cache", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-channels", help="draw and save channel samples")
    _common(p)
    p.add_argument("--T", type=int, default=None, help="number of draws (default: config T)")
    p.add_argument("--stream", type=int, default=0, help="0 = training, 1 = evaluation")

    p = sub.add_parser("solve-cache", help="optimize cache sizes on training samples")
    _common(p)
    p.add_argument("--channels", help="channel file (default: draw from --seed)")
    p.add_argument("--fix-beamformers", action="store_true",
                   help="keep the equal-power beamformers fixed")

    p = sub.add_parser("solve-mcmb", help="delivery beamformers for one channel draw")
    _common(p)
    p.add_argument("--channels", help="channel file (default: draw from --seed)")
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--cache", help="allocation JSON (default: equal split)")

    p = sub.add_parser("run-experiment", help="proposed scheme on evaluation draws")
    _common(p, fmt=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--absolute", action="store_true", help="report bit/s instead of bit/s/Hz")

    p = sub.add_parser("run-baselines", help="baseline schemes on evaluation draws")
    _common(p, fmt=True)
    p.add_argument("--schemes", nargs="+", choices=SCHEMES, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--absolute", action="store_true", help="report bit/s instead of bit/s/Hz")

    p = sub.add_parser("verify", help="run the numerical oracle suite")
    p.add_argument("--quick", action="store_true", help="fewer probes per check")
    p.add_argument("--out", default=None, help="also write the table as JSON here")

    p = sub.add_parser("round-cache", help="round an allocation to integers within budget")
    p.add_argument("allocation", help="allocation JSON with key 'C'")
    p.add_argument("--config", help="JSON config supplying C_tot and file sizes")
    p.add_argument("--out", default=".", help="output directory")
    return parser


# Helpers ------------------------------------------------------------------------------

def _configs(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return desk_config()


def _seed(args, config):
    return config.seed if args.seed is None else args.seed


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _channels(args, config, exp, stream=0):
    if getattr(args, "channels", None):
        ch = load_channels(args.channels)
        if ch.H.shape[1:] != (config.K, config.N, config.M):
            raise ValueError(f"{args.channels}: channel dimensions {ch.H.shape[1:]} do not "
                             f"match config (K, N, M)")
        return ch
    return sample_channels(config, exp.distances, exp.antenna_gain_db, _seed(args, config),
                           stream=stream)


def _finite(x):
    """JSON has no NaN; unmeasured quantities become null."""
    x = float(x)
    return x if np.isfinite(x) else None


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


# Subcommands --------------------------------------------------------------------------

def cmd_generate_channels(args):
    config, exp = _configs(args)
    ch = sample_channels(config, exp.distances, exp.antenna_gain_db, _seed(args, config),
                         T=args.T, stream=args.stream)
    path = os.path.join(_outdir(args), f"channels_seed{ch.seed}_stream{ch.stream}.txt")
    save_channels(ch, path)
    return [path]


def cmd_solve_cache(args):
    config, exp = _configs(args)
    ch = _channels(args, config, exp)
    sol = solve_cache_allocation(config, ch, fix_V=args.fix_beamformers)
    out = _outdir(args)
    path = os.path.join(out, "allocation.json")
    objective_bits = -sol.trace.objective[-1] / LN2 / config.T
    _write_json(path, {
        "C": [float(c) for c in sol.primal.C],
        "C_rounded": [int(c) for c in round_cache(sol.primal.C, config.C_tot, config.F_of_bs())],
        "average_sum_rate": objective_bits,
        "converged": bool(sol.converged),
        "outer_iterations": len(sol.trace.objective) - 1,
        "stationarity_gap": float(sol.stationarity_gap),
        "fingerprint": config.fingerprint(),
        "seed": int(ch.seed),
    })
    paths = [path]
    if args.trace:
        tpath = os.path.join(out, "trace.csv")
        sol.trace.write_csv(tpath, timing=args.timing)
        paths.append(tpath)
    return paths


def cmd_solve_mcmb(args):
    config, exp = _configs(args)
    ch = _channels(args, config, exp)
    if not 0 <= args.realization < ch.T:
        raise ValueError(f"realization {args.realization} outside [0, {ch.T})")
    if args.cache:
        with open(args.cache) as fh:
            C = np.asarray(json.load(fh)["C"], dtype=float)
        if C.shape != (config.K,):
            raise ValueError(f"{args.cache}: expected {config.K} cache sizes, got {C.shape}")
    else:
        C = np.full(config.K, config.C_tot / config.K)
    res = solve_mcmb(config, ch.H[args.realization], C, rho1=exp.mcmb_rho1, rho2=exp.mcmb_rho2,
                     tol=exp.mcmb_tol, max_outer=exp.mcmb_max_outer,
                     inner_tol=exp.mcmb_inner_tol)
    out = _outdir(args)
    path = os.path.join(out, "mcmb.json")
    finite = np.isfinite(res.cluster_rate)
    _write_json(path, {
        "sum_rate": res.sum_rate / LN2,
        "cluster_rate": [float(r / LN2) if f else None for r, f in zip(res.cluster_rate, finite)],
        "outer_iterations": res.iterations,
        "C": [float(c) for c in C],
        "V_real": res.V.real.tolist(),
        "V_imag": res.V.imag.tolist(),
        "realization": args.realization,
        "seed": int(ch.seed),
    })
    paths = [path]
    if args.trace:
        tpath = os.path.join(out, "mcmb_trace.csv")
        with open(tpath, "w") as fh:
            fh.write("iteration,sum_rate\n")
            for i, v in enumerate(res.objective_trace):
                fh.write(f"{i},{float(v / LN2)!r}\n")
        paths.append(tpath)
    return paths


def _emit(report, args, out):
    scale = BANDWIDTH_HZ if args.absolute else 1.0
    path = os.path.join(out, f"{report.scheme}.{args.format}")
    emit_report(report, path, args.format, scale=scale)
    return path


def cmd_run_experiment(args):
    config, exp = _configs(args)
    train, evals = experiment_channels(config, exp, _seed(args, config))
    sol = solve_cache_allocation(config, train)
    report = run_proposed(config, train, evals, exp, workers=args.workers, solution=sol)
    out = _outdir(args)
    paths = [_emit(report, args, out)]
    apath = os.path.join(out, "allocation.json")
    allocation_json(sol.primal.C, apath)
    paths.append(apath)
    if args.trace:
        tpath = os.path.join(out, "trace.csv")
        sol.trace.write_csv(tpath, timing=args.timing)
        paths.append(tpath)
    return paths


def cmd_run_baselines(args):
    config, exp = _configs(args)
    train, evals = experiment_channels(config, exp, _seed(args, config))
    schemes = args.schemes or exp.baselines
    out = _outdir(args)
    return [_emit(run_scheme(s, config, train, evals, exp, workers=args.workers), args, out)
            for s in schemes]


def cmd_verify(args):
    from .verify import standard_suite
    results = standard_suite(quick=args.quick)
    for r in results:
        print(r.line())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "verify.json"), [
            {"name": r.name, "max_abs": _finite(r.max_abs), "max_rel": _finite(r.max_rel),
             "passed": bool(r.passed), "samples": int(r.samples), "seed": int(r.seed),
             "note": r.note} for r in results])
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise RuntimeError(f"oracle checks failed: {', '.join(failed)}")
    return []


def cmd_round_cache(args):
    with open(args.allocation) as fh:
        C = np.asarray(json.load(fh)["C"], dtype=float)
    if args.config:
        config, _ = load_config(args.config)
    else:
        config, _ = desk_config()
    caps = config.F_of_bs() if len(C) == config.K else None
    rounded = round_cache(C, config.C_tot, caps)
    path = os.path.join(_outdir(args), "allocation_rounded.json")
    _write_json(path, {"C": [int(c) for c in rounded], "C_tot": config.C_tot})
    return [path]


COMMANDS = {
    "generate-channels": cmd_generate_channels,
    "solve-cache": cmd_solve_cache,
    "solve-mcmb": cmd_solve_mcmb,
    "run-experiment": cmd_run_experiment,
    "run-baselines": cmd_run_baselines,
    "verify": cmd_verify,
    "round-cache": cmd_round_cache,
}


def _fail(command, exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "command": command}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(None, exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        for path in COMMANDS[args.command](args):
            print(path)
    except Exception as exc:            # reported as JSON for batch drivers
        return _fail(args.command, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
