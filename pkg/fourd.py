"""
Field-scale 4D reconstruction: single-row SLAM per row-session, scheduled
cross-row / cross-session association, joint optimization over shared
landmarks, and assembly of the registered point clouds.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from analysis import segment_vegetation
from exceptions import FourDError, InsufficientCorrespondences, InsufficientData, TimestampOutsideBracket
from factorgraph import (FactorGraph, NoiseModel, PriorFactor, SolveReport, VectorValue, gate_outliers,
                         optimize_lm, optimize_with_gating)
from frontend import associate_robust, track_features
from geometry import Rotation3, align_rigid
from models import (FieldDataset, FieldModel4D, Frame, FrameId, Landmark, PointCloud,
                    RowSessionData, RowSessionKey, Track, gps_offset_key, state_key)
from schemas import AssociationReport, PipelineConfig, RowSessionReport, SolveSummary
from sensorfactors import (CameraState, GpPriorParams, GpsFactor, SmartVisionFactor, angular_rate_factor,
                           gp_interpolated_gps_factor, gp_prior_factor, imu_factor, preintegrate,
                           smart_vision_factor, state_prior_factor)

logger = logging.getLogger(__name__)

SHARED_UID_BASE = 10**12

Observation = Tuple[FrameId, int]
Link = Tuple[Observation, Observation]


@dataclass(eq=False)
class RowSessionResult:
    key: RowSessionKey
    data: RowSessionData
    tracks: List[Track]
    factors: Dict[int, SmartVisionFactor]
    graph: FactorGraph
    values: dict
    reports: List[SolveReport]
    landmarks: List[Landmark] = field(default_factory=list)

    @property
    def frames(self) -> Dict[FrameId, Frame]:
        return {f.frame_id: f for f in self.data.frames}

    @property
    def trajectory(self) -> List[CameraState]:
        return [self.values[state_key(f.frame_id)] for f in self.data.frames]

    def landmarks_in(self, frame_id: FrameId) -> List[Landmark]:
        return [lm for lm in self.landmarks if lm.feature_in(frame_id) is not None]


def summarize(reports: Sequence[SolveReport]) -> SolveSummary:
    return SolveSummary(
        initial_error=reports[0].initial_error,
        final_error=reports[-1].final_error,
        iterations=sum(r.iterations for r in reports),
        reason=reports[-1].reason,
        deactivated=sum(r.deactivated for r in reports),
        rounds=len(reports),
    )


# Initialization
def triad(body_a, body_b, world_a, world_b) -> Rotation3:
    """Rotation taking body vectors onto world vectors; the first pair is matched exactly."""
    def frame(a, b):
        a = a / np.linalg.norm(a)
        c = np.cross(a, b)
        c /= np.linalg.norm(c)
        return np.column_stack([a, c, np.cross(a, c)])
    return Rotation3.from_matrix(frame(world_a, world_b) @ frame(body_a, body_b).T)


def _window_mean(timestamps, samples, t0: float, t1: float) -> np.ndarray:
    mask = (timestamps >= t0) & (timestamps <= t1)
    if not mask.any():
        mask = np.zeros(len(timestamps), dtype=bool)
        mask[int(np.argmin(np.abs(timestamps - 0.5 * (t0 + t1))))] = True
    return samples[mask].mean(axis=0)


def initial_states(data: RowSessionData, preintegrated, config: PipelineConfig) -> List[CameraState]:
    """Attitude by TRIAD (accelerometer up, image x along the GPS course), then
    gyro chaining; positions and velocities from GPS or, without GPS factors,
    by IMU dead reckoning from the first state."""
    times = np.array([f.timestamp for f in data.frames])
    gps_t, gps_p = data.gps_timestamps, data.gps_positions
    def interp(series, t):
        return np.column_stack([np.interp(t, gps_t, series[:, i]) for i in range(3)])

    positions = interp(gps_p, times)
    if len(gps_t) > 1:
        velocities = interp(np.gradient(gps_p, gps_t, axis=0), times)
    else:
        velocities = np.zeros_like(positions)

    course = gps_p[-1] - gps_p[0]
    course[2] = 0.0
    if np.linalg.norm(course) < 1e-6:
        course = np.array([1.0, 0.0, 0.0])
    up_body = _window_mean(data.imu_timestamps, data.imu_accel, times[0] - 0.25, times[0] + 0.25)
    rotation = triad(up_body, np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), course)

    half = 0.5 * (times[1] - times[0])
    rates = [_window_mean(data.imu_timestamps, data.imu_gyro, t - half, t + half) for t in times]
    gravity = np.asarray(config.gravity_m_s2)

    states = [CameraState(rotation, positions[0], velocities[0], rates[0], np.zeros(6), times[0])]
    for k, pre in enumerate(preintegrated):
        R, v, p = pre.predict(states[-1], gravity)
        if config.gps_factors_enabled:
            v, p = velocities[k + 1], positions[k + 1]
        states.append(CameraState(R, p, v, rates[k + 1], np.zeros(6), times[k + 1]))
    return states


# Single-row SLAM
def build_row_graph(data: RowSessionData, tracks: List[Track], config: PipelineConfig):
    """Factor graph of one row-session: IMU, GP prior, angular rate, GPS, smart vision and anchor."""
    if len(data.frames) < 2:
        raise InsufficientData(f"{data.key.label}: {len(data.frames)} images, need at least 2")
    if len(data.gps_timestamps) == 0:
        raise InsufficientData(f"{data.key.label}: no GPS fix")

    frames = data.frames
    keys = [state_key(f.frame_id) for f in frames]
    preintegrated = [
        preintegrate(data.imu_timestamps, data.imu_gyro, data.imu_accel, None, a.timestamp, b.timestamp,
                     config.gyro_sigma_rad_s, config.accel_sigma_m_s2)
        for a, b in zip(frames[:-1], frames[1:])
    ]
    states = initial_states(data, preintegrated, config)
    gravity = np.asarray(config.gravity_m_s2)
    gp = GpPriorParams(config.gp_qc)

    graph = FactorGraph()
    for key, state in zip(keys, states):
        graph.add_variable(key, state)

    sigmas = [config.anchor_rotation_sigma_rad, config.anchor_position_sigma_m,
              config.anchor_velocity_sigma_m_s, config.anchor_angular_rate_sigma_rad_s,
              config.bias_prior_sigma, config.bias_prior_sigma]
    graph.add_factor(state_prior_factor(keys[0], states[0], sigmas))

    half = 0.5 * (frames[1].timestamp - frames[0].timestamp)
    for k, (key, state) in enumerate(zip(keys, states)):
        mean_gyro = _window_mean(data.imu_timestamps, data.imu_gyro,
                                 state.timestamp - half, state.timestamp + half)
        graph.add_factor(angular_rate_factor(key, mean_gyro, config.angular_rate_sigma_rad_s))
        if k + 1 == len(keys):
            break
        dt = preintegrated[k].dt
        rw = (config.gyro_bias_rw_sigma_rad_s * np.sqrt(dt), config.accel_bias_rw_sigma_m_s2 * np.sqrt(dt))
        graph.add_factor(imu_factor(key, keys[k + 1], preintegrated[k], gravity, rw))
        graph.add_factor(gp_prior_factor(key, state, keys[k + 1], states[k + 1], gp))

    gps_count = 0
    if config.gps_factors_enabled:
        times = np.array([f.timestamp for f in frames])
        for t, position, sigma in zip(data.gps_timestamps, data.gps_positions, data.gps_sigmas):
            k = int(np.searchsorted(times, t, side="right")) - 1
            if k < 0 or k + 1 >= len(times):
                continue
            try:
                graph.add_factor(gp_interpolated_gps_factor(keys[k], states[k], keys[k + 1], states[k + 1],
                                                            (t, position, sigma)))
                gps_count += 1
            except TimestampOutsideBracket:
                continue

    frame_map = {f.frame_id: f for f in frames}
    factors = {}
    for track in tracks:
        factor = smart_vision_factor(track, frame_map, data.intrinsics, config.pixel_sigma_px,
                                     config.min_track_images)
        factors[track.track_id] = graph.add_factor(factor)
    logger.debug("%s: %d states, %d tracks, %d GPS factors", data.key.label, len(keys), len(tracks), gps_count)
    return graph, factors


def triangulate_landmarks(factors: Dict[int, SmartVisionFactor], tracks: Iterable[Track],
                          frames: Dict[FrameId, Frame], values) -> List[Landmark]:
    by_id = {t.track_id: t for t in tracks}
    landmarks = []
    for track_id, factor in factors.items():
        if not factor.active:
            continue
        point = factor.point(values)
        if point is None:
            continue
        track = by_id[track_id]
        colors = np.array([frames[fid].colors[i] for fid, i in track.observations], dtype=float)
        color = np.clip(np.round(colors.mean(axis=0)), 0, 255).astype(np.uint8)
        landmarks.append(Landmark(track_id, point, color, track))
    return landmarks


def solve_staged(graph: FactorGraph, config: PipelineConfig):
    """Fit the non-vision factors alone, gate the vision factors whose worst
    reprojection error at that fit exceeds `initial_gate_px`, then run the
    gated solve over everything."""
    vision = [f for f in graph.factors if f.vision and f.active]
    for factor in vision:
        factor.active = False
    try:
        values, prefit = optimize_lm(graph, max_iterations=config.lm_max_iterations)
    finally:
        for factor in vision:
            factor.active = True
    prefit.deactivated = gate_outliers(graph, values, config.initial_gate_px)
    logger.debug("prefit: error %.3e -> %.3e, %d of %d tracks held back", prefit.initial_error,
                 prefit.final_error, prefit.deactivated, len(vision))
    values, reports = optimize_with_gating(graph, config.reprojection_gate_px, config.max_gate_rounds,
                                           config.lm_max_iterations, values)
    return values, [prefit] + reports


def slam_single_row(data: RowSessionData, config: Optional[PipelineConfig] = None) -> RowSessionResult:
    config = config or PipelineConfig()
    if len(data.frames) < 2:
        raise InsufficientData(f"{data.key.label}: {len(data.frames)} images, need at least 2")
    tracks = track_features(data.frames, config.track_window_frames, config.ratio_test,
                            config.track_ransac_iterations, config.ransac_threshold_px,
                            config.min_track_images, config.seed)
    graph, factors = build_row_graph(data, tracks, config)
    values, reports = solve_staged(graph, config)
    result = RowSessionResult(data.key, data, tracks, factors, graph, values, reports)
    result.landmarks = triangulate_landmarks(factors, tracks, result.frames, values)
    summary = summarize(reports)
    logger.info("%s: %d frames, %d tracks, %d landmarks, error %.3e -> %.3e (%s)", data.key.label,
                len(data.frames), len(tracks), len(result.landmarks), summary.initial_error,
                summary.final_error, summary.reason)
    return result


def absolute_trajectory_error(estimated, truth, align: bool = True) -> float:
    """RMS camera-position error, optionally after the best rigid alignment."""
    est = np.array([s.position if hasattr(s, "position") else s for s in estimated], dtype=float)
    ref = np.array([s.position if hasattr(s, "position") else s for s in truth], dtype=float)
    if align and len(est) >= 3:
        T = align_rigid(est, ref)
        est = est @ T.R.T + T.translation
    return float(np.sqrt(np.mean(np.sum((est - ref) ** 2, axis=1))))


# Association schedule
def scheduled_rows(rows: int, row_filter: str = "all") -> List[int]:
    """Row indices entering the joint graph; parity is on the zero-based index."""
    if row_filter == "odd":
        return [r for r in range(rows) if r % 2 == 1]
    if row_filter == "even":
        return [r for r in range(rows) if r % 2 == 0]
    return list(range(rows))


def association_schedule(rows: int, sessions: int, row_filter: str = "all",
                         partition_rows: int = 0) -> List[Tuple[RowSessionKey, RowSessionKey]]:
    """Adjacent rows within a session, and the same row across adjacent sessions."""
    included = scheduled_rows(rows, row_filter)
    partition = (lambda r: r // partition_rows) if partition_rows > 0 else (lambda r: 0)
    pairs = []
    for t in range(sessions):
        for a, b in zip(included[:-1], included[1:]):
            if partition(a) == partition(b):
                pairs.append((RowSessionKey(t, a), RowSessionKey(t, b)))
    for t in range(sessions - 1):
        for r in included:
            pairs.append((RowSessionKey(t, r), RowSessionKey(t + 1, r)))
    return pairs


def select_image_pairs(trajectory_a: Sequence[CameraState], trajectory_b: Sequence[CameraState],
                       stride: int = 3) -> List[Tuple[int, int]]:
    """Every `stride`-th frame of a paired with the frame of b with the nearest camera center."""
    if not trajectory_a or not trajectory_b:
        return []
    tree = cKDTree(np.array([s.position for s in trajectory_b]))
    picks = list(range(0, len(trajectory_a), stride))
    _, nearest = tree.query(np.array([trajectory_a[i].position for i in picks]))
    return [(i, int(j)) for i, j in zip(picks, np.atleast_1d(nearest))]


def associate_rows(result_a: RowSessionResult, result_b: RowSessionResult,
                   config: PipelineConfig) -> Tuple[AssociationReport, List[Link]]:
    """Bounded, homography-warped association over the scheduled image pairs of two row-sessions."""
    report = AssociationReport(source_session=result_a.key.session, source_row=result_a.key.row,
                               target_session=result_b.key.session, target_row=result_b.key.row)
    links: List[Link] = []
    if not result_a.landmarks:
        return report, links
    cloud = np.array([lm.position for lm in result_a.landmarks])
    traj_a, traj_b = result_a.trajectory, result_b.trajectory
    K1, K2 = result_a.data.intrinsics, result_b.data.intrinsics
    for i, j in select_image_pairs(traj_a, traj_b, config.association_stride):
        frame1, frame2 = result_a.data.frames[i], result_b.data.frames[j]
        report.image_pairs += 1
        try:
            matches = associate_robust(
                frame1, frame2, (K1, traj_a[i].pose), (K2, traj_b[j].pose), result_a.landmarks_in(frame1.frame_id),
                result_a.data.sampler, cloud, config.baseline_switch_m, config.bbox_half_width_px,
                config.plane_neighbors, config.plane_radius_m, config.max_descriptor_l2,
                config.ransac_iterations, config.ransac_threshold_px, config.seed)
        except InsufficientCorrespondences as exc:
            report.failed_pairs += 1
            logger.debug("%s/%s pair (%d, %d) skipped: %s", result_a.key.label, result_b.key.label,
                         i, j, exc.detail)
            continue
        inliers = matches.inlier_pairs
        report.candidate_pairs += len(matches.pairs)
        if len(inliers) < config.min_shared_inliers:
            report.failed_pairs += 1
            continue
        report.inlier_pairs += len(inliers)
        links.extend(((frame1.frame_id, a), (frame2.frame_id, b)) for a, b in inliers)
    logger.info("Association %s -> %s: %d/%d image pairs, %d inlier pairs", result_a.key.label,
                result_b.key.label, report.image_pairs - report.failed_pairs, report.image_pairs,
                report.inlier_pairs)
    return report, links


# Joint optimization
@dataclass(eq=False)
class SharedLandmarks:
    """Multi-row smart factors and the per-row track factors they replace."""
    factors: List[SmartVisionFactor] = field(default_factory=list)
    members: List[List[Tuple[RowSessionKey, int]]] = field(default_factory=list)

    def replaced(self) -> set:
        return {member for group in self.members for member in group}

    def row_sessions(self, index: int) -> Tuple[RowSessionKey, ...]:
        return tuple(sorted({RowSessionKey(k.session, k.row) for k in self.factors[index].keys}))


def build_shared_landmarks(results: Dict[RowSessionKey, RowSessionResult], links: Sequence[Link],
                           config: PipelineConfig) -> SharedLandmarks:
    """Union of tracks and association links; groups spanning two or more
    row-sessions become multi-row smart factors. Groups holding two features of
    one image are dropped."""
    node_index: Dict[Observation, int] = {}
    owner: Dict[Observation, Tuple[RowSessionKey, int]] = {}
    rows, cols = [], []

    def node(obs: Observation) -> int:
        return node_index.setdefault(obs, len(node_index))

    for key, result in results.items():
        for track in result.tracks:
            first = node(track.observations[0])
            for obs in track.observations:
                owner[obs] = (key, track.track_id)
                rows.append(first)
                cols.append(node(obs))
    for a, b in links:
        if a[0].row_session in results and b[0].row_session in results:
            rows.append(node(a))
            cols.append(node(b))

    shared = SharedLandmarks()
    if not node_index:
        return shared
    n = len(node_index)
    _, labels = connected_components(sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)),
                                     directed=False)
    groups: Dict[int, List[Observation]] = {}
    for obs, index in node_index.items():
        groups.setdefault(int(labels[index]), []).append(obs)

    frames = {fid: f for result in results.values() for fid, f in result.frames.items()}
    intrinsics = {key: result.data.intrinsics for key, result in results.items()}
    dropped = 0
    for observations in sorted(groups.values(), key=min):
        if len({fid.row_session for fid, _ in observations}) < 2:
            continue
        observations.sort()
        frame_ids = [fid for fid, _ in observations]
        if len(set(frame_ids)) != len(frame_ids):
            dropped += 1
            continue
        track = Track(len(shared.factors), observations)
        try:
            factor = smart_vision_factor(track, frames, intrinsics, config.pixel_sigma_px,
                                         config.min_track_images)
        except InsufficientData:
            continue
        shared.factors.append(factor)
        shared.members.append(sorted({owner[obs] for obs in observations if obs in owner}))
    logger.info("%d shared landmarks, %d conflicting groups dropped", len(shared.factors), dropped)
    return shared


def build_joint_graph(results: Dict[RowSessionKey, RowSessionResult], shared: SharedLandmarks,
                      members: Sequence[RowSessionKey], config: PipelineConfig) -> FactorGraph:
    """Row graphs of `members` with their merged tracks swapped for the shared
    landmarks among them. Every session after the earliest gets a GPS offset
    variable under a zero-mean prior."""
    graph = FactorGraph()
    reference = min(key.session for key in members)
    for session in sorted({key.session for key in members} - {reference}):
        offset = gps_offset_key(session)
        graph.add_variable(offset, VectorValue(np.zeros(3)))
        graph.add_factor(PriorFactor(offset, VectorValue(np.zeros(3)),
                                     NoiseModel.isotropic(config.gps_offset_sigma_m, 3)))

    replaced = shared.replaced()
    for key in members:
        result = results[key]
        for state_id, value in result.values.items():
            graph.add_variable(state_id, value)
        track_factor = {id(f): tid for tid, f in result.factors.items()}
        for factor in result.graph.factors:
            tid = track_factor.get(id(factor))
            if tid is not None and (key, tid) in replaced:
                continue
            if isinstance(factor, GpsFactor) and key.session != reference:
                factor = factor.with_offset(gps_offset_key(key.session))
            graph.add_factor(factor)

    member_set = set(members)
    for i, factor in enumerate(shared.factors):
        if set(shared.row_sessions(i)) <= member_set:
            graph.add_factor(factor)
    return graph


def joint_optimize(results: Dict[RowSessionKey, RowSessionResult], shared: SharedLandmarks,
                   config: PipelineConfig) -> Tuple[dict, List[SolveSummary]]:
    """Re-solve only the row-sessions connected by shared landmarks; all others
    keep their single-row solutions unchanged."""
    values = {}
    for result in results.values():
        values.update(result.values)
    if not shared.factors:
        return values, []

    keys = sorted(results)
    index = {key: i for i, key in enumerate(keys)}
    rows, cols = [], []
    for i in range(len(shared.factors)):
        members = shared.row_sessions(i)
        rows.extend(index[members[0]] for _ in members)
        cols.extend(index[m] for m in members)
    _, labels = connected_components(
        sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(keys), len(keys))), directed=False)

    summaries = []
    for component in sorted(set(labels[rows])):
        members = [k for k in keys if labels[index[k]] == component]
        graph = build_joint_graph(results, shared, members, config)
        solved, reports = optimize_with_gating(graph, config.reprojection_gate_px, config.max_gate_rounds,
                                               config.lm_max_iterations)
        values.update(solved)
        summary = summarize(reports)
        summaries.append(summary)
        logger.info("Joint solve over %s: error %.3e -> %.3e, %d deactivated",
                    ", ".join(k.label for k in members), summary.initial_error, summary.final_error,
                    summary.deactivated)
        for session in sorted({k.session for k in members}):
            offset = solved.get(gps_offset_key(session))
            if offset is not None:
                logger.info("Session %d GPS offset %s m", session, np.round(offset.vector, 3))
    return values, summaries


def _row_uid(key: RowSessionKey, track_id: int) -> int:
    return (key.session * 1000 + key.row) * 1_000_000 + track_id


def assemble_model(dataset: FieldDataset, results: Dict[RowSessionKey, RowSessionResult],
                   values: dict, shared: SharedLandmarks, config: PipelineConfig) -> FieldModel4D:
    """Per row-session clouds, each landmark triangulated from that row-session's
    own observations with the final camera states."""
    model = FieldModel4D(dataset.rows, dataset.sessions, list(dataset.session_days))
    shared_uid = {}
    for i, group in enumerate(shared.members):
        if shared.factors[i].active:
            model.shared_links.append(shared.row_sessions(i))
            for member in group:
                shared_uid[member] = SHARED_UID_BASE + i

    for key, result in sorted(results.items()):
        model.trajectories[key] = {f.frame_id: values[state_key(f.frame_id)] for f in result.data.frames}
        frames = result.frames
        points, colors, uids = [], [], []
        for track in result.tracks:
            factor = result.factors[track.track_id]
            point = factor.point(values)
            if point is None:
                continue
            errors = factor.reprojection_errors(values)
            if errors is None or np.max(errors) > config.reprojection_gate_px:
                continue
            observed = np.array([frames[fid].colors[i] for fid, i in track.observations], dtype=float)
            points.append(point)
            colors.append(np.clip(np.round(observed.mean(axis=0)), 0, 255).astype(np.uint8))
            uids.append(shared_uid.get((key, track.track_id), _row_uid(key, track.track_id)))
        if points:
            model.clouds[key] = PointCloud(np.array(points), np.array(colors), np.array(uids, dtype=np.int64))
        else:
            model.clouds[key] = PointCloud.empty()
    return model


def solve_rows(dataset: FieldDataset, config: PipelineConfig,
               keys: Optional[Iterable[RowSessionKey]] = None):
    """Single-row SLAM over row-sessions; failures are reported, not raised."""
    results: Dict[RowSessionKey, RowSessionResult] = {}
    reports: List[RowSessionReport] = []
    for key in (dataset.keys() if keys is None else keys):
        try:
            data = dataset.load(key)
            result = slam_single_row(data, config)
        except FourDError as exc:
            logger.warning("%s failed: %s", key.label, exc.detail)
            reports.append(RowSessionReport(session=key.session, row=key.row, status="failed",
                                            detail=f"{type(exc).__name__}: {exc.detail}"))
            continue
        results[key] = result
        reports.append(RowSessionReport(session=key.session, row=key.row, frames=len(data.frames),
                                        tracks=len(result.tracks), landmarks=len(result.landmarks),
                                        solve=summarize(result.reports)))
    return results, reports


def reconstruct_4d(dataset: FieldDataset, config: Optional[PipelineConfig] = None) -> FieldModel4D:
    config = config or PipelineConfig()
    included = set(scheduled_rows(dataset.rows, config.row_filter))
    keys = [k for k in dataset.keys() if k.row in included]
    results, row_reports = solve_rows(dataset, config, keys)
    return register_rows(dataset, results, row_reports, config)


def register_rows(dataset: FieldDataset, results: Dict[RowSessionKey, RowSessionResult],
                  row_reports: List[RowSessionReport], config: PipelineConfig) -> FieldModel4D:
    """Association over the schedule, shared landmarks and the joint solve of
    already solved row-sessions."""
    association_reports, links = [], []
    for key_a, key_b in association_schedule(dataset.rows, dataset.sessions, config.row_filter,
                                             config.partition_rows):
        if key_a not in results or key_b not in results:
            continue
        report, pair_links = associate_rows(results[key_a], results[key_b], config)
        association_reports.append(report)
        links.extend(pair_links)

    shared = build_shared_landmarks(results, links, config)
    values, joint_reports = joint_optimize(results, shared, config)
    model = assemble_model(dataset, results, values, shared, config)
    model.row_reports = row_reports
    model.association_reports = association_reports
    model.joint_reports = joint_reports
    logger.info("4D model: %d row-sessions, %d shared landmarks, %d points",
                len(model.clouds), len(model.shared_links), sum(len(c) for c in model.clouds.values()))
    return model


def ground_discrepancy(model: FieldModel4D, reference_session: int = 0,
                       max_horizontal_m: float = 0.05, exg_threshold: float = 0.1) -> float:
    """Median vertical gap between ground points of each later session and their
    horizontal nearest neighbour in the reference session."""
    reference = model.session_cloud(reference_session)
    _, ground_ref = segment_vegetation(reference, exg_threshold)
    if len(ground_ref) == 0:
        return float("nan")
    tree = cKDTree(ground_ref.points[:, :2])
    gaps = []
    for session in model.sessions_present():
        if session == reference_session:
            continue
        _, ground = segment_vegetation(model.session_cloud(session), exg_threshold)
        if len(ground) == 0:
            continue
        dist, idx = tree.query(ground.points[:, :2], distance_upper_bound=max_horizontal_m)
        ok = np.isfinite(dist)
        gaps.append(np.abs(ground.points[ok, 2] - ground_ref.points[idx[ok], 2]))
    if not gaps or not np.concatenate(gaps).size:
        return float("nan")
    return float(np.median(np.concatenate(gaps)))
