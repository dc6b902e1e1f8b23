"""Dual ascent with and without momentum on one desk-scale subproblem, plus the
outer cache-allocation trace.

Writes dual_plain.csv, dual_accelerated.csv and outer.csv into --out.
"""
import argparse
import os
import time

from cran_cache.channels import sample_channels
from cran_cache.config import desk_config, load_config
from cran_cache.dual import solve_subproblem, write_trace
from cran_cache.sca import _subproblem, cache_model, initialize_cache_problem, run_sca


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--tol", type=float, default=1e-6, help="inner tolerance")
    parser.add_argument("--out", default="results/convergence")
    args = parser.parse_args()
    cfg, exp = load_config(args.config) if args.config else desk_config()
    os.makedirs(args.out, exist_ok=True)

    ch = sample_channels(cfg, exp.distances, exp.antenna_gain_db, seed=args.seed)
    model = cache_model(cfg, ch)
    state = initialize_cache_problem(cfg, ch, model)
    sub = _subproblem(model, cfg, state, False)
    for mode in ("plain", "accelerated"):
        rows = []
        t0 = time.perf_counter()
        sol = solve_subproblem(sub, mode=mode, tol=args.tol, backtracking=True,
                               max_iter=200_000, trace=rows)
        write_trace(rows, os.path.join(args.out, f"dual_{mode}.csv"))
        print(f"{mode:<12} {sol.iterations:>7} iterations  D={sol.dual_objective:.8g}  "
              f"{time.perf_counter() - t0:.1f}s")

    sol = run_sca(model, cfg, state)
    sol.trace.write_csv(os.path.join(args.out, "outer.csv"))
    print(f"outer loop   {len(sol.trace.objective) - 1:>7} iterations  "
          f"objective={sol.trace.objective[-1]:.6g}  converged={sol.converged}")


if __name__ == "__main__":
    main()
