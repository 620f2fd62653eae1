import argparse
from pathlib import Path

import numpy as np

from commands.common import (add_common_flags, has_truth, open_dataset, parse_label, require_key,
                             resolve_pipeline_config)
from dataset import write_states
from fourd import absolute_trajectory_error, slam_single_row, summarize
from models import PointCloud
from plyio import export_ply


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("slam", help="single-row SLAM on one row-session")
    parser.add_argument("dataset", help="dataset directory")
    parser.add_argument("--key", default="s0_r0", help="row-session label s<session>_r<row>")
    add_common_flags(parser, out_help="output directory (default ./slam_<key>)")
    parser.set_defaults(handler=run)
    return parser


def run(args) -> int:
    # 1. Inputs
    pipeline = resolve_pipeline_config(args)
    key = parse_label(args.key)
    dataset = open_dataset(args.dataset, args.rows, args.sessions)
    data = dataset.load(require_key(dataset, key))
    out = Path(args.out or f"slam_{key.label}")
    out.mkdir(parents=True, exist_ok=True)

    # 2. Solve
    result = slam_single_row(data, pipeline)
    summary = summarize(result.reports)
    print(f"✓ {key.label}: {len(data.frames)} frames, {len(result.tracks)} tracks, "
          f"{len(result.landmarks)} landmarks")
    print(f"  error {summary.initial_error:.4g} -> {summary.final_error:.4g} ({summary.reason}), "
          f"{summary.deactivated} factors gated out in {summary.rounds} rounds")

    # 3. Outputs
    write_states(out / f"states_{key.label}.csv", result.trajectory, data.frame_ids())
    if result.landmarks:
        cloud = PointCloud(np.array([lm.position for lm in result.landmarks]),
                           np.array([lm.color for lm in result.landmarks], dtype=np.uint8),
                           np.array([lm.uid for lm in result.landmarks], dtype=np.int64))
    else:
        cloud = PointCloud.empty()
    export_ply(cloud, out / f"landmarks_{key.label}.ply")
    print(f"✓ Trajectory and landmarks written to {out}")

    # 4. Ground truth comparison
    if has_truth(dataset):
        truth = dataset.truth_states(key)
        estimated = [s for f, s in zip(data.frames, result.trajectory) if f.frame_id in truth]
        reference = [truth[f.frame_id] for f in data.frames if f.frame_id in truth]
        if reference:
            print(f"  ATE {absolute_trajectory_error(estimated, reference):.4f} m (aligned), "
                  f"{absolute_trajectory_error(estimated, reference, align=False):.4f} m (raw)")
    return 0
