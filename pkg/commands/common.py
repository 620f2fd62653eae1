"""Flags, config resolution and model-directory I/O shared by the subcommands."""
import argparse
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import config
from dataset import DatasetReader, read_states, write_states
from exceptions import DatasetError, InvalidParams
from models import FieldModel4D, RowSessionData, RowSessionKey
from plyio import export_ply, import_ply
from schemas import Manifest, PipelineConfig, SimulationParams, load_config

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LABEL_PATTERN = re.compile(r"^s(\d+)_r(\d+)$")


def add_common_flags(parser: argparse.ArgumentParser, out_help: str = "output directory") -> None:
    parser.add_argument("--config", default=None, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=None, help=f"random seed (default FOURD_SEED={config.DEFAULT_SEED})")
    parser.add_argument("--out", default=None, help=out_help)
    parser.add_argument("--rows", type=int, default=None, help="use only the first N rows")
    parser.add_argument("--sessions", type=int, default=None, help="use only the first N sessions")


def _config_path(args) -> Optional[str]:
    return args.config or config.DEFAULT_CONFIG_PATH or None


def _seed(args, file_value: Optional[int]) -> int:
    if args.seed is not None:
        return args.seed
    return file_value if file_value is not None else config.DEFAULT_SEED


def resolve_pipeline_config(args) -> PipelineConfig:
    """Config file (or FOURD_CONFIG), then --seed / FOURD_SEED on top."""
    path = _config_path(args)
    base = load_config(path)
    seed = _seed(args, base.seed if path else None)
    return base.updated(seed=seed) if seed != base.seed else base


def resolve_simulation_params(args) -> Tuple[SimulationParams, int]:
    path = args.config
    params = SimulationParams.load(path) if path else SimulationParams()
    changes = {k: v for k, v in (("rows", args.rows), ("sessions", args.sessions)) if v is not None}
    if changes:
        params = params.updated(**changes)
    return params, _seed(args, None)


def parse_label(label: str) -> RowSessionKey:
    match = LABEL_PATTERN.match(label)
    if not match:
        raise InvalidParams(f"row-session label {label!r} is not of the form s<session>_r<row>")
    return RowSessionKey(int(match.group(1)), int(match.group(2)))


@dataclass
class DatasetView:
    """The first `rows` x `sessions` row-sessions of a dataset."""
    dataset: DatasetReader
    rows: int
    sessions: int

    @property
    def session_days(self) -> List[int]:
        return self.dataset.session_days[:self.sessions]

    @property
    def root(self) -> Path:
        return self.dataset.root

    def keys(self) -> List[RowSessionKey]:
        return [k for k in self.dataset.keys() if k.row < self.rows and k.session < self.sessions]

    def load(self, key: RowSessionKey) -> RowSessionData:
        return self.dataset.load(key)

    def truth_states(self, key: RowSessionKey):
        return self.dataset.truth_states(key)


def open_dataset(path, rows: Optional[int] = None, sessions: Optional[int] = None) -> DatasetView:
    reader = DatasetReader(path)
    return DatasetView(reader, min(rows or reader.rows, reader.rows), min(sessions or reader.sessions, reader.sessions))


def require_key(dataset: DatasetView, key: RowSessionKey) -> RowSessionKey:
    if key not in dataset.keys():
        raise InvalidParams(f"{key.label} is outside the selected {dataset.rows} rows x {dataset.sessions} sessions")
    return key


def has_truth(dataset: DatasetView) -> bool:
    return (Path(dataset.root) / "ground_truth").is_dir()


# Model directory
def save_model(model: FieldModel4D, out_dir, dataset_path: str, pipeline: PipelineConfig) -> Manifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(
        dataset=str(dataset_path), config=pipeline.model_dump(), rows=model.rows, sessions=model.sessions,
        session_days=list(model.session_days), row_sessions=model.row_reports,
        associations=model.association_reports, joint=model.joint_reports,
        shared_landmarks=len(model.shared_links),
    )
    for key in model.keys():
        name = f"cloud_{key.label}.ply"
        export_ply(model.clouds[key], out / name)
        manifest.clouds[key.label] = name
    for key in sorted(model.trajectories):
        name = f"states_{key.label}.csv"
        states = model.trajectories[key]
        write_states(out / name, list(states.values()), list(states))
        manifest.trajectories[key.label] = name
    (out / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info("Model written to %s (%d clouds)", out, len(manifest.clouds))
    return manifest


def load_manifest(model_dir) -> Manifest:
    path = Path(model_dir) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError("model manifest not found", str(path))
    return Manifest.model_validate_json(path.read_text())


def load_model(model_dir) -> Tuple[FieldModel4D, Manifest]:
    """Clouds and trajectories listed in the manifest; landmark uids are not stored in PLY."""
    folder = Path(model_dir)
    manifest = load_manifest(folder)
    model = FieldModel4D(manifest.rows, manifest.sessions, list(manifest.session_days),
                         row_reports=list(manifest.row_sessions),
                         association_reports=list(manifest.associations), joint_reports=list(manifest.joint))
    for label, name in manifest.clouds.items():
        model.clouds[parse_label(label)] = import_ply(folder / name)
    for label, name in manifest.trajectories.items():
        key = parse_label(label)
        model.trajectories[key] = read_states(folder / name, key)
    return model, manifest
