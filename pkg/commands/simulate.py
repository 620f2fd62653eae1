import argparse
from pathlib import Path

import config
from commands.common import add_common_flags, resolve_simulation_params
from dataset import write_dataset, write_ground_truth
from simulator import simulate_dataset


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("simulate", help="write a synthetic multi-row, multi-session dataset")
    add_common_flags(parser, out_help=f"dataset directory (default {config.DATA_DIR})")
    parser.add_argument("--no-truth", action="store_true", help="skip the ground_truth/ directory")
    parser.set_defaults(handler=run)
    return parser


def run(args) -> int:
    # 1. Parameters
    params, seed = resolve_simulation_params(args)
    out = Path(args.out or config.DATA_DIR)
    print(f"Simulating {params.rows} rows x {params.sessions} sessions (seed {seed})...")

    # 2. Sensor data per row-session
    field = simulate_dataset(params, seed)
    write_dataset(field, out, params)
    print(f"✓ Dataset written to {out}")

    # 3. Ground truth
    if not args.no_truth:
        folder = write_ground_truth(field, out)
        print(f"✓ Ground truth written to {folder}")
    return 0
