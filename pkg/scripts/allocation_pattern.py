"""Optimized cache size of every BS against its distance, for several seeds.

Writes allocation.csv with one row per (seed, BS).
"""
import argparse
import csv
import os

from cran_cache.channels import sample_channels
from cran_cache.config import desk_config, load_config
from cran_cache.sca import solve_cache_allocation


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config")
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--out", default="results/allocation")
    args = parser.parse_args()
    cfg, exp = load_config(args.config) if args.config else desk_config()
    os.makedirs(args.out, exist_ok=True)

    with open(os.path.join(args.out, "allocation.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "bs", "cluster", "distance_m", "cache"])
        for seed in args.seeds:
            ch = sample_channels(cfg, exp.distances, exp.antenna_gain_db, seed=seed)
            C = solve_cache_allocation(cfg, ch).primal.C
            for k, c in enumerate(C):
                w.writerow([seed, k, cfg.cluster_of[k], exp.distances[k], repr(float(c))])
            print(f"seed {seed}: " + " ".join(f"{c:.2f}" for c in C))


if __name__ == "__main__":
    main()
