import itertools

import numpy as np
import pytest

from exceptions import InsufficientData
from factorgraph import SolveReport, optimize_lm
from fourd import (SharedLandmarks, absolute_trajectory_error, assemble_model, associate_rows,
                   association_schedule, build_joint_graph, build_shared_landmarks, ground_discrepancy,
                   joint_optimize, register_rows, scheduled_rows, select_image_pairs, slam_single_row,
                   solve_rows, summarize, triad)
from geometry import Pose3, rot_exp
from models import FieldModel4D, PointCloud, RowSessionData, RowSessionKey, state_key
from schemas import PipelineConfig, SimulationParams
from sensorfactors import CameraState
from simulator import simulate_dataset

KEY = RowSessionKey(0, 0)


def _states(positions):
    return [CameraState.at_rest(float(k), Pose3(rot_exp(np.zeros(3)), np.asarray(p, float)))
            for k, p in enumerate(positions)]


def _truth_id(frames, track):
    ids = {int(frames[fid].landmark_ids[i]) for fid, i in track.observations}
    return ids.pop() if len(ids) == 1 and min(ids) >= 0 else None


@pytest.fixture(scope="module")
def single_row():
    field_data = simulate_dataset(SimulationParams(rows=1, sessions=1, row_length_m=6.6), seed=7)
    return field_data, field_data.load(KEY), field_data.truth(KEY).states


class TestHelpers:
    def test_triad_matches_first_pair_exactly(self, rng):
        R = rot_exp(rng.normal(size=3)).matrix
        a, b = rng.normal(size=3), rng.normal(size=3)
        estimate = triad(a, b, R @ a, R @ b)
        np.testing.assert_allclose(estimate.matrix, R, atol=1e-12)
        skewed = triad(a, b, R @ a, R @ b + 0.1 * rng.normal(size=3))
        np.testing.assert_allclose(skewed.matrix @ (a / np.linalg.norm(a)), R @ a / np.linalg.norm(a),
                                   atol=1e-12)

    def test_row_filter_parity_is_zero_based(self):
        assert scheduled_rows(5) == [0, 1, 2, 3, 4]
        assert scheduled_rows(5, "odd") == [1, 3]
        assert scheduled_rows(5, "even") == [0, 2, 4]

    def test_association_schedule(self):
        pairs = association_schedule(3, 2)
        assert len(pairs) == 7
        assert (RowSessionKey(0, 0), RowSessionKey(0, 1)) in pairs
        assert (RowSessionKey(0, 2), RowSessionKey(1, 2)) in pairs
        assert (RowSessionKey(0, 0), RowSessionKey(0, 2)) not in pairs

        partitioned = association_schedule(3, 2, partition_rows=2)
        assert (RowSessionKey(0, 1), RowSessionKey(0, 2)) not in partitioned
        assert len(partitioned) == 5

        assert association_schedule(4, 1, row_filter="odd") == [(RowSessionKey(0, 1), RowSessionKey(0, 3))]

    def test_image_pairs_by_nearest_center(self):
        a = _states([[x, 0.0, 1.0] for x in np.arange(10) * 0.1])
        b = _states([[x + 0.02, 1.0, 1.0] for x in np.arange(10) * 0.1])
        assert select_image_pairs(a, b, stride=3) == [(0, 0), (3, 3), (6, 6), (9, 9)]
        assert select_image_pairs(a, [], stride=3) == []

    def test_trajectory_error(self, rng):
        truth = rng.normal(size=(20, 3))
        T = Pose3(rot_exp([0.1, -0.2, 0.3]), np.array([1.0, 2.0, 3.0]))
        moved = truth @ T.R.T + T.translation
        assert absolute_trajectory_error(moved, truth) == pytest.approx(0.0, abs=1e-9)
        assert absolute_trajectory_error(moved, truth, align=False) > 1.0
        assert absolute_trajectory_error(truth + [0.0, 0.0, 0.1], truth, align=False) == pytest.approx(0.1)

    def test_summarize_rounds(self):
        reports = [SolveReport(10.0, 2.0, 5, "relative_decrease", deactivated=1),
                   SolveReport(1.5, 1.0, 2, "small_step")]
        summary = summarize(reports)
        assert (summary.initial_error, summary.final_error) == (10.0, 1.0)
        assert (summary.iterations, summary.deactivated, summary.rounds) == (7, 1, 2)
        assert summary.reason == "small_step"

    def test_ground_discrepancy(self, rng):
        xy = rng.uniform(0.0, 1.0, (300, 2))
        brown = np.tile([115, 89, 64], (300, 1)).astype(np.uint8)
        model = FieldModel4D(rows=1, sessions=2, session_days=[0, 14])
        model.clouds[RowSessionKey(0, 0)] = PointCloud(np.column_stack([xy, np.zeros(300)]), brown)
        model.clouds[RowSessionKey(1, 0)] = PointCloud(np.column_stack([xy + 0.001, np.full(300, 0.03)]), brown)
        assert ground_discrepancy(model) == pytest.approx(0.03)
        assert np.isnan(ground_discrepancy(FieldModel4D(rows=1, sessions=1, session_days=[0])))


class TestSingleRow:
    @pytest.fixture(scope="class")
    def solved(self, single_row):
        _, data, _ = single_row
        return slam_single_row(data, PipelineConfig())

    def test_too_few_images(self, single_row):
        _, data, _ = single_row
        short = RowSessionData(data.key, data.intrinsics, data.frames[:1], data.imu_timestamps, data.imu_gyro,
                               data.imu_accel, data.gps_timestamps, data.gps_positions, data.gps_sigmas,
                               data.sampler)
        with pytest.raises(InsufficientData):
            slam_single_row(short)

    @pytest.mark.slow
    def test_trajectory_and_landmarks(self, single_row, solved):
        field_data, data, truth = single_row
        summary = summarize(solved.reports)
        assert summary.final_error < summary.initial_error
        assert len(solved.trajectory) == len(data.frames)
        assert absolute_trajectory_error(solved.trajectory, truth) < 0.05
        assert absolute_trajectory_error(solved.trajectory, truth, align=False) < 0.1
        assert len(solved.landmarks) >= 20
        assert all(len(lm.track) >= 7 for lm in solved.landmarks)

        errors = []
        for lm in solved.landmarks:
            uid = _truth_id(solved.frames, lm.track)
            if uid is not None:
                errors.append(np.linalg.norm(lm.position - field_data.scene.landmark_positions[uid]))
        assert np.median(errors) < 0.1

    @pytest.mark.slow
    def test_without_gps_factors(self, single_row, solved):
        _, data, truth = single_row
        result = slam_single_row(data, PipelineConfig(gps_factors_enabled=False))
        positions = np.array([s.position for s in result.trajectory])
        assert np.all(np.isfinite(positions))
        assert len(result.trajectory) == len(truth)
        assert absolute_trajectory_error(result.trajectory, truth) > absolute_trajectory_error(solved.trajectory,
                                                                                               truth)


@pytest.mark.slow
class TestFieldReconstruction:
    @pytest.fixture(scope="class")
    def solved_rows(self):
        params = SimulationParams(rows=2, sessions=2, row_length_m=4.0, gps_session_offsets_m=[0.0, 0.05])
        field_data = simulate_dataset(params, seed=7)
        config = PipelineConfig()
        results, row_reports = solve_rows(field_data, config)
        return field_data, config, results, row_reports

    @pytest.fixture(scope="class")
    def models(self, solved_rows):
        field_data, config, results, row_reports = solved_rows
        values = {}
        for result in results.values():
            values.update(result.values)
        before = assemble_model(field_data, results, values, SharedLandmarks(), config)
        return before, register_rows(field_data, results, row_reports, config)

    def test_every_row_session_is_solved(self, models):
        _, model = models
        assert model.keys() == [RowSessionKey(0, 0), RowSessionKey(0, 1), RowSessionKey(1, 0), RowSessionKey(1, 1)]
        assert all(r.status == "ok" for r in model.row_reports)
        assert all(len(model.clouds[k]) > 0 for k in model.keys())
        assert set(model.trajectories) == set(model.keys())

    def test_sessions_are_linked(self, models):
        _, model = models
        assert len(model.association_reports) == 4
        assert sum(r.inlier_pairs for r in model.association_reports) > 0
        assert model.shared_links
        assert model.joint_reports
        linked = {key.session for link in model.shared_links for key in link}
        assert linked == {0, 1}

    def test_joint_solve_absorbs_the_gps_offset(self, models):
        before, model = models
        assert ground_discrepancy(before) > 0.03
        assert ground_discrepancy(model) < 0.02
        assert ground_discrepancy(model) < ground_discrepancy(before)
        assert model.session_days == [0, 14]

    def test_unlinked_rows_solve_as_separate_blocks(self, solved_rows):
        _, config, results, _ = solved_rows
        members = [RowSessionKey(0, 0), RowSessionKey(0, 1)]
        together, _ = optimize_lm(build_joint_graph(results, SharedLandmarks(), members, config))
        for key in members:
            alone, _ = optimize_lm(build_joint_graph(results, SharedLandmarks(), [key], config))
            for frame in results[key].data.frames:
                state = state_key(frame.frame_id)
                np.testing.assert_allclose(together[state].position, alone[state].position, atol=1e-3)

    def test_false_cross_row_match_is_gated(self, solved_rows):
        field_data, config, results, _ = solved_rows
        key_a, key_b = RowSessionKey(0, 0), RowSessionKey(0, 1)
        pair = {key_a: results[key_a], key_b: results[key_b]}
        _, links = associate_rows(pair[key_a], pair[key_b], config)
        linked = {obs for link in links for obs in link}
        positions = field_data.scene.landmark_positions

        def unlinked(result):
            frames = result.frames
            out = []
            for lm in result.landmarks:
                uid = _truth_id(frames, lm.track)
                if uid is not None and not linked.intersection(lm.track.observations):
                    out.append((lm, uid))
            return out

        lm_a, lm_b = next((a, b) for (a, ua), (b, ub) in itertools.product(unlinked(pair[key_a]),
                                                                           unlinked(pair[key_b]))
                          if np.linalg.norm(positions[ua] - positions[ub]) > 0.5)
        planted = (lm_a.track.observations[0], lm_b.track.observations[0])
        shared = build_shared_landmarks(pair, links + [planted], config)
        index = next(i for i, group in enumerate(shared.members) if (key_a, lm_a.track.track_id) in group)
        assert (key_b, lm_b.track.track_id) in shared.members[index]

        joint_optimize(pair, shared, config)
        assert not shared.factors[index].active
        assert shared.factors[index].gated
