"""Train Cases 0-3 over several seeds and export the smoothed reward curves.

Usage: python scripts/run_ablation.py [--seeds 0,1,2] [--config FILE] [key=value ...]
"""

import argparse
import logging

import numpy as np

from isacbf import harness
from isacbf.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--cases", default="0,1,2,3")
    ap.add_argument("overrides", nargs="*")
    args = ap.parse_intermixed_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    base = load_config(args.config, args.overrides)
    seeds = [int(s) for s in args.seeds.split(",")]
    cases = [int(c) for c in args.cases.split(",")]
    dirs = []
    for case in cases:
        finals = []
        for seed in seeds:
            d = harness.run_case(base.replace(case=case, seed=seed))
            dirs.append(d)
            finals.append(harness.load_summary(d)["final100_mean"])
        print(f"case {case}: final-100 mean per seed {np.round(finals, 2).tolist()} (avg {np.mean(finals):.2f})")
    out = harness.export_plot_data(dirs, f"{base.out_dir}/ablation_curves.csv")
    print(f"curves -> {out}")


if __name__ == "__main__":
    main()
