import argparse
from pathlib import Path

from commands.common import load_model, parse_label
from plyio import export_ply


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("export", help="re-export one row-session or one session as PLY")
    parser.add_argument("model", help="model directory written by reconstruct4d")
    target = parser.add_mutually_exclusive_group(required=True)
    target.add_argument("--key", help="row-session label s<session>_r<row>")
    target.add_argument("--session", type=int, help="merge every row of one session")
    parser.add_argument("--out", required=True, help="PLY file to write")
    parser.set_defaults(handler=run)
    return parser


def run(args) -> int:
    model, _ = load_model(args.model)
    if args.key:
        key = parse_label(args.key)
        if key not in model.clouds:
            print(f"❌ {key.label} is not in the model")
            return 1
        cloud = model.clouds[key]
    else:
        cloud = model.session_cloud(args.session)
    export_ply(cloud, Path(args.out))
    print(f"✓ {len(cloud)} points written to {args.out}")
    return 0
