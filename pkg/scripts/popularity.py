"""Cache split between a popular and an unpopular file as the popularity varies.

Every cluster holds two equal-size files; the channel draws are shared by all
request combinations. Writes popularity.csv with one row per (p, BS).
"""
import argparse
import csv
import os

import numpy as np

from cran_cache.channels import sample_channels
from cran_cache.config import desk_config
from cran_cache.sca import FileCatalog, solve_multifile


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--T", type=int, default=5, help="channel draws")
    parser.add_argument("--p", type=float, nargs="+", default=[0.5, 0.7, 0.9])
    parser.add_argument("--out", default="results/popularity")
    args = parser.parse_args()
    cfg, exp = desk_config(T=args.T)
    os.makedirs(args.out, exist_ok=True)

    ch = sample_channels(cfg, exp.distances, exp.antenna_gain_db, seed=args.seed)
    with open(os.path.join(args.out, "popularity.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_popular", "bs", "cache_popular", "cache_other"])
        for p in args.p:
            cat = FileCatalog([[100.0, 100.0]] * cfg.G, [[p, 1.0 - p]] * cfg.G)
            H = np.repeat(ch.H[:, None], len(cat.tuples()), axis=1)
            alloc = solve_multifile(cfg, cat, H).allocation
            for k, (a, b) in enumerate(alloc):
                w.writerow([p, k, repr(a), repr(b)])
            total = np.sum(alloc, axis=0)
            print(f"p={p:.2f}: popular file {total[0]:.2f}, other file {total[1]:.2f}")


if __name__ == "__main__":
    main()
