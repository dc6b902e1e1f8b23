"""Regenerate the JSON configs shipped in configs/ from the built-in scenarios."""
import argparse
import os

from cran_cache.config import desk_config, paper_config, save_config


def tiny_config():
    """Two clusters of two BSs; small enough for CLI smoke runs."""
    desk, exp = desk_config(eval_realizations=3, distances=[160.0, 260.0, 200.0, 280.0],
                            mcmb_max_outer=30)
    cfg = desk.replace(G=2, K=4, cluster_of=[0, 0, 1, 1], F_g=[100.0, 100.0], M=4, T=4,
                       C_tot=40.0, max_outer=30, sigma2=desk.sigma2[:4])
    return cfg, exp


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "configs"))
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for name, (cfg, exp) in {"paper": paper_config(), "desk": desk_config(),
                             "tiny": tiny_config()}.items():
        path = os.path.join(args.out, f"{name}.json")
        save_config(path, cfg, exp)
        print(path)


if __name__ == "__main__":
    main()
