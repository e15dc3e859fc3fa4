"""Command-line entry point: ``isacbf <subcommand> [--config FILE] [key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, load_config
from .model import Side

log = logging.getLogger("isacbf")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _sides(arg: str) -> list[Side]:
    return [Side.TRANSMIT, Side.RECEIVE] if arg == "both" else [Side(arg)]


def cmd_gen_csi(cfg, args):
    harness.ensure_csi_dataset(cfg)
    print(harness.csi_dataset_path(cfg))


def cmd_train_ae(cfg, args):
    harness.ensure_ae(cfg)
    print(harness.ae_dir(cfg))


def cmd_gen_recon(cfg, args):
    for side in _sides(args.side):
        harness.ensure_recon_dataset(cfg, side)
        print(harness.recon_paths(cfg, side)[0])


def cmd_train_recon(cfg, args):
    for side in _sides(args.side):
        harness.ensure_recon(cfg, side)
        print(harness.recon_paths(cfg, side)[1])


def cmd_train_rl(cfg, args):
    out = harness.run_case(cfg, baseline=not args.no_baseline)
    print(out)
    print(json.dumps(harness.load_summary(out), indent=2, sort_keys=True))


def cmd_evaluate(cfg, args):
    run = Path(args.run) if args.run else harness.run_dir(cfg)
    if args.run and not args.config:
        # overrides apply on top of the configuration stored with the run
        cfg = load_config(run / "config.txt", args.overrides)
    report = harness.evaluate(run, cfg,
                              n_scenarios=args.n_scenarios, policy=args.policy, seed=args.eval_seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_sweep(cfg, args):
    spec = harness.SweepSpec(args.param, args.values, args.seeds)
    print(harness.sweep(spec, cfg, args.out))


def cmd_export(cfg, args):
    runs = args.runs
    if not runs:
        runs = sorted(str(p.parent) for p in Path(cfg.out_dir).glob("*/log.csv"))
    out = args.out or Path(cfg.out_dir) / "plot_data.csv"
    print(harness.export_plot_data(runs, out, window=args.window))


COMMANDS = {
    "gen-csi": (cmd_gen_csi, "generate the CSI dataset"),
    "train-ae": (cmd_train_ae, "train the CSI autoencoder"),
    "gen-recon": (cmd_gen_recon, "generate beampattern/beamformer pairs"),
    "train-recon": (cmd_train_recon, "train the reconstruction networks"),
    "train-rl": (cmd_train_rl, "train the A2C agent for cfg.case"),
    "evaluate": (cmd_evaluate, "greedy or random rollouts of a trained run"),
    "sweep": (cmd_sweep, "run_case over feature_size or angle_samples values"),
    "export": (cmd_export, "smoothed reward curves for plotting"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isacbf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("overrides", nargs="*", metavar="key=value")
        if name in ("gen-recon", "train-recon"):
            p.add_argument("--side", choices=("transmit", "receive", "both"), default="both")
        elif name == "train-rl":
            p.add_argument("--no-baseline", action="store_true", help="skip the random-policy baseline")
        elif name == "evaluate":
            p.add_argument("--run", help="run directory (default: the one cfg maps to)")
            p.add_argument("--n-scenarios", type=int, default=1000)
            p.add_argument("--policy", choices=("greedy", "random"), default="greedy")
            p.add_argument("--eval-seed", type=int, default=0)
            p.add_argument("--out", help="also write the report to this JSON file")
        elif name == "sweep":
            p.add_argument("--param", required=True)
            p.add_argument("--values", type=_int_list, required=True)
            p.add_argument("--seeds", type=_int_list, default=[0])
            p.add_argument("--out")
        elif name == "export":
            p.add_argument("--runs", nargs="*", default=[])
            p.add_argument("--window", type=int, default=20)
            p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.overrides)
        COMMANDS[args.command][0](cfg, args)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"isacbf {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
