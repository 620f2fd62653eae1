import argparse
import json
from pathlib import Path

from commands.common import add_common_flags, open_dataset, parse_label, require_key, resolve_pipeline_config
from exceptions import InsufficientCorrespondences
from fourd import associate_rows, select_image_pairs, slam_single_row
from frontend import association_metrics, match_naive


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("associate", help="associate two row-sessions (benchmarking)")
    parser.add_argument("dataset", help="dataset directory")
    parser.add_argument("--source", default="s0_r0", help="source row-session label")
    parser.add_argument("--target", default="s1_r0", help="target row-session label")
    parser.add_argument("--method", choices=["robust", "naive"], default="robust")
    add_common_flags(parser)
    parser.set_defaults(handler=run)
    return parser


def _naive(result_a, result_b, pipeline):
    totals = {"possible": 0, "found": 0, "correct": 0}
    pairs = select_image_pairs(result_a.trajectory, result_b.trajectory, pipeline.association_stride)
    for i, j in pairs:
        frame1, frame2 = result_a.data.frames[i], result_b.data.frames[j]
        try:
            matches = match_naive(frame1, frame2, pipeline.ratio_test, pipeline.ransac_iterations,
                                  pipeline.ransac_threshold_px, pipeline.seed)
        except InsufficientCorrespondences:
            matches = None
        for name, value in association_metrics(matches, frame1, frame2).items():
            if name in totals:
                totals[name] += value
    return len(pairs), totals


def _robust(result_a, result_b, pipeline):
    report, links = associate_rows(result_a, result_b, pipeline)
    frames = {**result_a.frames, **result_b.frames}
    pairs = select_image_pairs(result_a.trajectory, result_b.trajectory, pipeline.association_stride)
    possible = sum(association_metrics(None, result_a.data.frames[i], result_b.data.frames[j])["possible"]
                   for i, j in pairs)
    correct = 0
    for (fid1, a), (fid2, b) in links:
        lm = frames[fid1].landmark_ids[a]
        if lm >= 0 and lm == frames[fid2].landmark_ids[b]:
            correct += 1
    return report.image_pairs, {"possible": possible, "found": len(links), "correct": correct}


def run(args) -> int:
    pipeline = resolve_pipeline_config(args)
    dataset = open_dataset(args.dataset, args.rows, args.sessions)
    source = require_key(dataset, parse_label(args.source))
    target = require_key(dataset, parse_label(args.target))
    result_a = slam_single_row(dataset.load(source), pipeline)
    result_b = slam_single_row(dataset.load(target), pipeline)
    print(f"✓ Solved {source.label} and {target.label}")

    method = _robust if args.method == "robust" else _naive
    image_pairs, totals = method(result_a, result_b, pipeline)
    recall = totals["correct"] / totals["possible"] if totals["possible"] else 0.0
    precision = totals["correct"] / totals["found"] if totals["found"] else 1.0
    print(f"✓ {args.method}: {image_pairs} image pairs, {totals['found']} matches, "
          f"{totals['correct']} correct of {totals['possible']} possible")
    print(f"  recall {recall:.3f}  precision {precision:.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        record = {"source": source.label, "target": target.label, "method": args.method,
                  "image_pairs": image_pairs, **totals, "recall": recall, "precision": precision}
        (out / f"association_{source.label}_{target.label}_{args.method}.json").write_text(
            json.dumps(record, indent=2) + "\n")
    return 0
