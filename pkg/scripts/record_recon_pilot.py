"""Train the default reconstruction nets and record their held-out median error.

The acceptance suite locks later runs against this file (with headroom).
Usage: python scripts/record_recon_pilot.py [out_dir]
"""

import json
import sys
from pathlib import Path

import numpy as np

from isacbf import harness
from isacbf.config import ExperimentConfig
from isacbf.model import Side
from isacbf.recon import generate_recon_dataset, pattern_relative_error, untrained_like

HEADROOM = 1.25


def main(out_dir="runs"):
    cfg = ExperimentConfig(out_dir=out_dir)
    record = {"headroom": HEADROOM, "d2": cfg.d2, "recon_epochs": cfg.recon_epochs, "held_out_seed": 777}
    for side in (Side.TRANSMIT, Side.RECEIVE):
        model = harness.ensure_recon(cfg, side)
        held = generate_recon_dataset(cfg.system, 2000, side, seed=777)
        err = float(np.median(pattern_relative_error(model, held.patterns)))
        base = float(np.median(pattern_relative_error(untrained_like(model, cfg.system), held.patterns)))
        record[side.value] = err
        print(f"{side.value}: median relative error {err:.4f} (untrained {base:.4f})")
    path = Path(__file__).resolve().parents[1] / "tests" / "data" / "recon_pilot.json"
    path.write_text(json.dumps(record, indent=2) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main(*sys.argv[1:])
