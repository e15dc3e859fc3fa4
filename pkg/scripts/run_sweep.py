"""Feature-size and angle-sample sweeps over the standard value sets.

Usage: python scripts/run_sweep.py {feature_size,angle_samples} [--seeds 0] [key=value ...]
"""

import argparse
import logging

from isacbf import harness
from isacbf.config import load_config

DEFAULT_VALUES = {
    "feature_size": [4, 8, 16, 32, 64],
    "angle_samples": [45, 90, 180, 360, 720, 1440],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("param", choices=sorted(DEFAULT_VALUES))
    ap.add_argument("--values", help="comma-separated override of the default value set")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--config")
    ap.add_argument("overrides", nargs="*")
    args = ap.parse_intermixed_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    values = [int(v) for v in args.values.split(",")] if args.values else DEFAULT_VALUES[args.param]
    spec = harness.SweepSpec(args.param, values, [int(s) for s in args.seeds.split(",")])
    print(harness.sweep(spec, load_config(args.config, args.overrides)))


if __name__ == "__main__":
    main()
