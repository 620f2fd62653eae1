import argparse
from pathlib import Path

from analysis import estimate_heights, load_site_truth, load_sites, write_gnuplot, write_height_csv
from commands.common import load_model, resolve_pipeline_config


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("analyze", help="canopy height per site and session")
    parser.add_argument("model", help="model directory written by reconstruct4d")
    parser.add_argument("sites", help="sites CSV (site_id,x_m,y_m,radius_m)")
    parser.add_argument("--truth", default=None, help="true heights CSV (site_id,date,true_height_m)")
    parser.add_argument("--config", default=None, help="flat key = value config file (canopy analysis keys)")
    parser.add_argument("--out", default=None, help="height CSV (default <model>/heights.csv)")
    parser.add_argument("--seed", type=int, default=None, help="ground-plane RANSAC seed")
    parser.set_defaults(handler=run)
    return parser


def run(args) -> int:
    pipeline = resolve_pipeline_config(args)
    model, _ = load_model(args.model)
    sites = load_sites(args.sites)
    truth = load_site_truth(args.truth) if args.truth else None

    series, failures = estimate_heights(
        sites, model, truth, ground_radius_m=pipeline.ground_radius_m,
        min_points=pipeline.min_vegetation_points, exg_threshold=pipeline.exg_threshold,
        inlier_dist=pipeline.ground_inlier_m, seed=pipeline.seed)
    out = Path(args.out or Path(args.model) / "heights.csv")
    write_height_csv(series, out)
    write_gnuplot(series, out.with_suffix(".dat"))

    for site_id in failures:
        print(f"❌ {site_id}: no ground plane")
    print(f"✓ {len(series)}/{len(sites)} sites measured over {model.sessions} sessions")
    print(f"✓ Heights written to {out}")
    return 0
