import argparse
import csv
import json

import numpy as np
import pytest

import config
import main
from commands.common import load_model, parse_label, resolve_pipeline_config, save_model
from exceptions import InvalidParams
from models import FieldModel4D, FrameId, PointCloud, RowSessionKey
from plyio import import_ply
from schemas import PipelineConfig, RowSessionReport
from sensorfactors import CameraState


def _args(**kwargs):
    defaults = dict(config=None, seed=None, out=None, rows=None, sessions=None)
    return argparse.Namespace(**{**defaults, **kwargs})


@pytest.fixture
def no_env_config(monkeypatch):
    monkeypatch.setattr(config, "DEFAULT_CONFIG_PATH", "")
    monkeypatch.setattr(config, "DEFAULT_SEED", 7)


class TestCommonFlags:
    def test_labels(self):
        assert parse_label("s2_r10") == RowSessionKey(2, 10)
        with pytest.raises(InvalidParams):
            parse_label("row3")

    def test_seed_precedence(self, tmp_path, no_env_config):
        assert resolve_pipeline_config(_args()).seed == 7
        assert resolve_pipeline_config(_args(seed=3)).seed == 3
        (tmp_path / "p.cfg").write_text("seed = 11\nratio_test = 0.7\n")
        from_file = resolve_pipeline_config(_args(config=str(tmp_path / "p.cfg")))
        assert (from_file.seed, from_file.ratio_test) == (11, 0.7)
        assert resolve_pipeline_config(_args(config=str(tmp_path / "p.cfg"), seed=5)).seed == 5

    def test_model_directory_round_trip(self, tmp_path):
        key = RowSessionKey(1, 0)
        model = FieldModel4D(rows=1, sessions=2, session_days=[0, 14])
        model.clouds[key] = PointCloud(np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.5]]),
                                       np.array([[1, 2, 3], [4, 5, 6]], dtype=np.uint8))
        model.trajectories[key] = {FrameId(1, 0, 2): CameraState.at_rest(0.25)}
        model.row_reports = [RowSessionReport(session=1, row=0, frames=1)]
        manifest = save_model(model, tmp_path, "data", PipelineConfig())
        assert manifest.clouds == {"s1_r0": "cloud_s1_r0.ply"}
        assert json.loads((tmp_path / "manifest.json").read_text())["session_days"] == [0, 14]

        loaded, again = load_model(tmp_path)
        assert loaded.keys() == [key]
        np.testing.assert_array_equal(loaded.clouds[key].points, model.clouds[key].points)
        assert list(loaded.trajectories[key]) == [FrameId(1, 0, 2)]
        assert loaded.trajectories[key][FrameId(1, 0, 2)].timestamp == 0.25
        assert again.row_sessions[0].frames == 1


class TestMain:
    def test_missing_model_is_reported(self, tmp_path, capsys):
        assert main.main(["export", str(tmp_path), "--session", "0", "--out", str(tmp_path / "x.ply")]) == 1
        assert "manifest.json" in capsys.readouterr().err

    def test_bad_label_is_reported(self, tmp_path, capsys, no_env_config):
        assert main.main(["slam", str(tmp_path), "--key", "first"]) == 1
        assert "InvalidParams" in capsys.readouterr().err

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main.main(["fly"])


@pytest.mark.slow
class TestWorkflow:
    @pytest.fixture(scope="class")
    def workspace(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("workflow")
        (root / "sim.cfg").write_text("rows = 1\nsessions = 2\nrow_length_m = 6.0\n")
        assert main.main(["simulate", "--config", str(root / "sim.cfg"), "--seed", "7",
                          "--out", str(root / "data")]) == 0
        assert main.main(["reconstruct4d", str(root / "data"), "--seed", "7", "--out", str(root / "model")]) == 0
        return root

    def test_dataset_layout(self, workspace):
        data = workspace / "data"
        assert (data / "dataset.cfg").exists()
        for name in ("observations.csv", "imu.csv", "gps.csv", "patches.npy"):
            assert (data / "session_1" / "row_0" / name).exists()
        assert (data / "ground_truth" / "states_s1_r0.csv").exists()

    def test_model_directory(self, workspace):
        model, manifest = load_model(workspace / "model")
        assert sorted(manifest.clouds) == ["s0_r0", "s1_r0"]
        assert all(r.status == "ok" for r in manifest.row_sessions)
        assert len(manifest.associations) == 1
        assert all(len(c) > 0 for c in model.clouds.values())

    def test_analyze_writes_heights(self, workspace, capsys):
        truth = workspace / "data" / "ground_truth"
        out = workspace / "heights.csv"
        assert main.main(["analyze", str(workspace / "model"), str(truth / "sites.csv"),
                          "--truth", str(truth / "site_heights.csv"), "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        assert {r["date"] for r in rows} == {"0", "14"}
        assert out.with_suffix(".dat").exists()
        assert "sites measured" in capsys.readouterr().out

    def test_export_session_cloud(self, workspace):
        out = workspace / "session0.ply"
        assert main.main(["export", str(workspace / "model"), "--session", "0", "--out", str(out)]) == 0
        assert len(import_ply(out)) > 0
        assert main.main(["export", str(workspace / "model"), "--key", "s0_r5", "--out", str(out)]) == 1

    def test_single_row_slam(self, workspace, no_env_config):
        out = workspace / "slam"
        assert main.main(["slam", str(workspace / "data"), "--key", "s0_r0", "--out", str(out)]) == 0
        assert (out / "states_s0_r0.csv").exists()
        assert (out / "landmarks_s0_r0.ply").exists()

    def test_analyze_reads_config(self, workspace, no_env_config):
        truth = workspace / "data" / "ground_truth"
        (workspace / "strict.cfg").write_text("min_vegetation_points = 1000000\n")
        out = workspace / "strict.csv"
        assert main.main(["analyze", str(workspace / "model"), str(truth / "sites.csv"),
                          "--config", str(workspace / "strict.cfg"), "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        assert all(r["height_m"] == "" for r in rows)

    def test_row_session_selection_is_honored(self, workspace, capsys, no_env_config):
        data = str(workspace / "data")
        assert main.main(["slam", data, "--key", "s1_r0", "--sessions", "1"]) == 1
        assert "outside the selected 1 rows x 1 sessions" in capsys.readouterr().err
        assert main.main(["associate", data, "--source", "s0_r0", "--target", "s1_r0", "--sessions", "1"]) == 1
        assert "s1_r0" in capsys.readouterr().err

    def test_same_seed_gives_identical_clouds(self, workspace):
        again = workspace / "again"
        assert main.main(["simulate", "--config", str(workspace / "sim.cfg"), "--seed", "7",
                          "--out", str(again / "data")]) == 0
        assert main.main(["reconstruct4d", str(again / "data"), "--seed", "7", "--out", str(again / "model")]) == 0
        for name in ("cloud_s0_r0.ply", "cloud_s1_r0.ply"):
            assert (again / "model" / name).read_bytes() == (workspace / "model" / name).read_bytes()
