import numpy as np
import pytest

from dataset import (DatasetReader, enu_to_geodetic, geodetic_to_enu, read_states, row_session_dir,
                     write_dataset, write_ground_truth, write_states)
from exceptions import DatasetError
from models import FrameId, RowSessionKey
from schemas import SimulationParams
from simulator import simulate_dataset

DATUM = (31.4752, -83.5285, 110.0)
KEY = RowSessionKey(0, 0)


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    params = SimulationParams(rows=1, sessions=1, row_length_m=2.0)
    field_data = simulate_dataset(params, seed=5)
    root = tmp_path_factory.mktemp("dataset")
    write_dataset(field_data, root, params)
    write_ground_truth(field_data, root)
    return field_data, root


class TestGeodetic:
    def test_local_offsets_survive_conversion(self, rng):
        enu = rng.uniform(-50.0, 50.0, (10, 3))
        np.testing.assert_allclose(geodetic_to_enu(enu_to_geodetic(enu, DATUM), DATUM), enu, atol=1e-6)

    def test_north_is_latitude(self):
        geo = enu_to_geodetic([[0.0, 111.0, 2.0]], DATUM)[0]
        assert geo[0] > DATUM[0]
        assert geo[1] == pytest.approx(DATUM[1])
        assert geo[2] == pytest.approx(112.0)
        assert (geo[0] - DATUM[0]) == pytest.approx(0.001, rel=0.01)


class TestReader:
    def test_round_trip_of_a_row_session(self, written):
        field_data, root = written
        original = field_data.load(KEY)
        reader = DatasetReader(root)
        assert (reader.rows, reader.sessions, reader.session_days) == (1, 1, [0])
        assert reader.keys() == [KEY]
        loaded = reader.load(KEY)

        kept = [f for f in original.frames if len(f)]
        assert [f.frame_id for f in loaded.frames] == [f.frame_id for f in kept]
        for a, b in zip(kept, loaded.frames):
            assert b.timestamp == a.timestamp
            np.testing.assert_array_equal(b.pixels, a.pixels)
            np.testing.assert_array_equal(b.landmark_ids, a.landmark_ids)
            np.testing.assert_array_equal(b.colors, a.colors)
            np.testing.assert_allclose(b.descriptors, a.descriptors, atol=1e-6)
        np.testing.assert_array_equal(loaded.imu_accel, original.imu_accel)
        np.testing.assert_array_equal(loaded.imu_timestamps, original.imu_timestamps)
        np.testing.assert_allclose(loaded.gps_positions, original.gps_positions, atol=1e-6)
        np.testing.assert_array_equal(loaded.sampler.patches, original.sampler.patches)

    def test_observation_columns_put_colors_last(self, written):
        field_data, root = written
        path = row_session_dir(root, KEY) / "observations.csv"
        header = path.read_text().splitlines()[0].split(",")
        assert header[:6] == ["frame_id", "timestamp", "landmark_id", "u", "v", "d0"]
        assert header[-4:] == ["d63", "red", "green", "blue"]
        first = next(f for f in field_data.load(KEY).frames if len(f))
        row = np.loadtxt(path, delimiter=",", skiprows=1, max_rows=1)
        np.testing.assert_allclose(row[5:-3], first.descriptors[0], atol=1e-6)
        np.testing.assert_array_equal(row[-3:], first.colors[0])

    def test_patch_offsets_index_the_stack(self, written):
        field_data, root = written
        loaded = DatasetReader(root).load(KEY)
        frame = loaded.frames[-1]
        assert frame.patch_offset + len(frame) == len(loaded.sampler.patches)

    def test_truth_states(self, written):
        field_data, root = written
        truth = DatasetReader(root).truth_states(KEY)
        states = field_data.truth(KEY).states
        assert len(truth) == len(states)
        first = truth[FrameId(0, 0, 0)]
        np.testing.assert_allclose(first.position, states[0].position, atol=1e-12)
        np.testing.assert_allclose(first.rotation.matrix, states[0].rotation.matrix, atol=1e-9)
        assert (root / "ground_truth" / "sites.csv").exists()
        assert (root / "ground_truth" / "site_heights.csv").exists()


class TestErrors:
    def test_missing_config(self, tmp_path):
        with pytest.raises(DatasetError) as exc:
            DatasetReader(tmp_path)
        assert "dataset.cfg" in exc.value.detail

    def test_missing_row_session(self, written, tmp_path):
        _, root = written
        (tmp_path / "dataset.cfg").write_text((root / "dataset.cfg").read_text())
        with pytest.raises(DatasetError):
            DatasetReader(tmp_path).load(KEY)

    def test_bad_config_value(self, tmp_path):
        (tmp_path / "dataset.cfg").write_text("rows = many\n")
        with pytest.raises(DatasetError):
            DatasetReader(tmp_path)

    def test_truncated_table_and_patch_mismatch(self, written, tmp_path):
        _, root = written
        (tmp_path / "dataset.cfg").write_text((root / "dataset.cfg").read_text())
        source, target = row_session_dir(root, KEY), row_session_dir(tmp_path, KEY)
        target.mkdir(parents=True)
        for name in ("observations.csv", "gps.csv", "patches.npy"):
            (target / name).write_bytes((source / name).read_bytes())
        (target / "imu.csv").write_text("timestamp,gx,gy,gz,ax,ay,az\n0.1,0,0,0,0,0\n")
        with pytest.raises(DatasetError) as exc:
            DatasetReader(tmp_path).load(KEY)
        assert "imu.csv" in exc.value.detail

        (target / "imu.csv").write_bytes((source / "imu.csv").read_bytes())
        np.save(target / "patches.npy", np.zeros((1, 16, 16), dtype=np.uint8))
        with pytest.raises(DatasetError):
            DatasetReader(tmp_path).load(KEY)


class TestStates:
    def test_write_then_read(self, written, tmp_path):
        field_data, _ = written
        states = field_data.truth(KEY).states[:3]
        ids = [FrameId(0, 0, k) for k in (4, 5, 9)]
        write_states(tmp_path / "s.csv", states, ids)
        loaded = read_states(tmp_path / "s.csv", KEY)
        assert list(loaded) == ids
        np.testing.assert_array_equal(loaded[ids[2]].velocity, states[2].velocity)
        np.testing.assert_array_equal(loaded[ids[1]].bias, states[1].bias)
