import argparse
import logging
from pathlib import Path

from commands.common import add_common_flags, open_dataset, resolve_pipeline_config, save_model
from fourd import reconstruct_4d

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("reconstruct4d", help="register every row-session into one 4D model")
    parser.add_argument("dataset", help="dataset directory")
    add_common_flags(parser, out_help="model directory (default ./model)")
    parser.set_defaults(handler=run)
    return parser


def run(args) -> int:
    # 1. Inputs
    pipeline = resolve_pipeline_config(args)
    dataset = open_dataset(args.dataset, args.rows, args.sessions)
    out = Path(args.out or "model")
    print(f"Reconstructing {dataset.rows} rows x {dataset.sessions} sessions from {args.dataset}...")

    # 2. Pipeline
    model = reconstruct_4d(dataset, pipeline)
    manifest = save_model(model, out, args.dataset, pipeline)

    # 3. Summary
    failed = [r for r in manifest.row_sessions if r.status == "failed"]
    for report in failed:
        print(f"❌ s{report.session}_r{report.row}: {report.detail}")
    linked = sum(1 for a in manifest.associations if a.inlier_pairs)
    print(f"✓ {len(manifest.clouds)} row-sessions registered, {len(failed)} failed")
    print(f"✓ {linked}/{len(manifest.associations)} row-session pairs associated, "
          f"{manifest.shared_landmarks} shared landmarks")
    print(f"✓ Model written to {out}")
    if manifest.row_sessions and len(failed) == len(manifest.row_sessions):
        logger.error("Every row-session failed")
        return 1
    return 0
