"""
Synthetic row-crop field with ground truth.

The field is simulated at feature level: every landmark carries a small planar
textured patch, and each observation's descriptor and patch raster are
rendered by intersecting pixel rays with that plane. Views of the same
landmark from different viewpoints therefore differ exactly by the homography
the plane induces.

World frame is local ENU. Vehicles drive +x along the rows; the camera looks
+y, pitched down. The IMU and GPS antenna are co-located with the camera.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from exceptions import InvalidParams
from frontend import descriptor_grid, patch_descriptor, patch_grid
from geometry import CameraIntrinsics, Pose3, Rotation3, project_points, right_jacobian_so3, rot_exp
from models import Frame, FrameId, RowSessionData, RowSessionKey
from schemas import SimulationParams
from sensorfactors import GRAVITY, CameraState

logger = logging.getLogger(__name__)

GROUND = 0
PLANT = 1

GROUND_ALBEDO = np.array([0.45, 0.35, 0.25])
PLANT_ALBEDO = np.array([0.20, 0.60, 0.20])
ALBEDO_JITTER = 0.02

IMAGE_MARGIN_PX = 16.0
MIN_DEPTH_M = 0.3
FACING_COSINE = 0.15
CLUTTER_DEPTH_M = 2.0
UNDULATION_WAVELENGTHS_M = (3.0, 3.7)
WAVELENGTH_RANGE_M = (0.015, 0.04)
AMPLITUDE_RANGE = (0.05, 0.15)

# wiggle frequencies (Hz)
LATERAL_FREQ = 0.11
VERTICAL_FREQ = 0.37
ATTITUDE_FREQS = np.array([0.21, 0.13, 0.17])


def camera_mount(pitch_deg: float) -> np.ndarray:
    """Camera-to-vehicle rotation: image x along +x, optical axis toward +y tilted down."""
    p = np.deg2rad(pitch_deg)
    x_c = np.array([1.0, 0.0, 0.0])
    y_c = np.array([0.0, -np.sin(p), -np.cos(p)])
    z_c = np.array([0.0, np.cos(p), -np.sin(p)])
    return np.column_stack([x_c, y_c, z_c])


def tangent_basis(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = np.atleast_2d(normals)
    helper = np.where(np.abs(n[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2


def random_textures(rng: np.random.Generator, count: int, components: int = 3) -> np.ndarray:
    """Sum-of-sinusoids texture parameters (count, components, [theta, wavelength, amplitude, phase])."""
    tex = np.empty((count, components, 4))
    tex[..., 0] = rng.uniform(0.0, np.pi, (count, components))
    tex[..., 1] = rng.uniform(*WAVELENGTH_RANGE_M, (count, components))
    tex[..., 2] = rng.uniform(*AMPLITUDE_RANGE, (count, components))
    tex[..., 3] = rng.uniform(0.0, 2.0 * np.pi, (count, components))
    return tex


def texture_value(textures: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Intensity of textures (n, c, 4) at surface coordinates u, v (n, m)."""
    theta = textures[:, :, 0:1]
    wavelength = textures[:, :, 1:2]
    amplitude = textures[:, :, 2:3]
    phase = textures[:, :, 3:4]
    arg = 2.0 * np.pi * (u[:, None, :] * np.cos(theta) + v[:, None, :] * np.sin(theta)) / wavelength
    return 0.5 + np.sum(amplitude * np.sin(arg + phase), axis=1)


@dataclass(eq=False)
class SyntheticScene:
    params: SimulationParams
    seed: int
    landmark_positions: np.ndarray   # (N, 3)
    landmark_normals: np.ndarray     # (N, 3)
    landmark_labels: np.ndarray      # (N,) GROUND or PLANT
    landmark_sessions: np.ndarray    # (N,) -1 for ground (persistent)
    landmark_plants: np.ndarray      # (N,) plant index, -1 for ground
    landmark_colors: np.ndarray      # (N, 3) uint8
    textures: np.ndarray             # (N, 3, 4)
    drift: np.ndarray                # (S, N, 1, 4)
    plant_xy: np.ndarray             # (P, 2)
    plant_rows: np.ndarray           # (P,)
    plant_heights: np.ndarray        # (S, P)
    undulation_phase: np.ndarray     # (2,)

    @property
    def session_days(self) -> List[int]:
        return self.params.session_days

    def elevation(self, x, y) -> np.ndarray:
        sx, sy = self.params.ground_slope
        lx, ly = UNDULATION_WAVELENGTHS_M
        return (sx * np.asarray(x) + sy * np.asarray(y) + self.params.ground_undulation_m
                * np.sin(2 * np.pi * np.asarray(x) / lx + self.undulation_phase[0])
                * np.sin(2 * np.pi * np.asarray(y) / ly + self.undulation_phase[1]))

    def ground_normal(self, x, y) -> np.ndarray:
        sx, sy = self.params.ground_slope
        lx, ly = UNDULATION_WAVELENGTHS_M
        a = self.params.ground_undulation_m
        ax = 2 * np.pi * np.asarray(x) / lx + self.undulation_phase[0]
        ay = 2 * np.pi * np.asarray(y) / ly + self.undulation_phase[1]
        dx = sx + a * 2 * np.pi / lx * np.cos(ax) * np.sin(ay)
        dy = sy + a * 2 * np.pi / ly * np.sin(ax) * np.cos(ay)
        n = np.column_stack([-np.atleast_1d(dx), -np.atleast_1d(dy), np.ones(np.size(dx))])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def plant_spheres(self, session: int) -> Tuple[np.ndarray, np.ndarray]:
        heights = self.plant_heights[session]
        radii = np.maximum(0.03, 0.5 * heights)
        base = self.elevation(self.plant_xy[:, 0], self.plant_xy[:, 1])
        centers = np.column_stack([self.plant_xy, base + heights - radii])
        return centers, radii

    def session_landmarks(self, session: int) -> np.ndarray:
        return np.flatnonzero((self.landmark_sessions == -1) | (self.landmark_sessions == session))

    def row_y(self, row: int) -> float:
        return row * self.params.row_spacing_m


def growth_heights(params: SimulationParams, vigor: np.ndarray) -> np.ndarray:
    """(sessions, plants) canopy heights, non-decreasing over sessions."""
    if params.session_heights_m:
        if len(params.session_heights_m) != params.sessions:
            raise InvalidParams("session_heights_m needs one height per session")
        heights = np.asarray(params.session_heights_m, dtype=float)
        if np.any(np.diff(heights) < 0):
            raise InvalidParams("session_heights_m must be non-decreasing")
        return np.repeat(heights[:, None], len(vigor), axis=1)
    days = np.asarray(params.session_days, dtype=float)
    logistic = 1.0 / (1.0 + np.exp(-params.growth_rate_per_day * (days - params.growth_midpoint_day)))
    span = params.height_max_m - params.height_min_m
    return params.height_min_m + span * vigor[None, :] * logistic[:, None]


def _hemisphere_directions(rng: np.random.Generator, count: int) -> np.ndarray:
    out = np.zeros((0, 3))
    while len(out) < count:
        d = rng.normal(size=(4 * count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d = d[(d[:, 2] >= 0.0) & (d[:, 1] <= 0.2)]
        out = np.vstack([out, d])
    return out[:count]


def _albedo(rng: np.random.Generator, base: np.ndarray, count: int) -> np.ndarray:
    colors = base + rng.uniform(-ALBEDO_JITTER, ALBEDO_JITTER, (count, 3))
    return np.clip(np.round(255.0 * colors), 0, 255).astype(np.uint8)


def generate_scene(seed: int, params: Optional[SimulationParams] = None) -> SyntheticScene:
    """Ground, plants and their landmarks. Deterministic in (seed, params)."""
    params = params or SimulationParams()
    if params.height_min_m > params.height_max_m:
        raise InvalidParams("height_min_m exceeds height_max_m")
    if params.gps_session_offsets_m and len(params.gps_session_offsets_m) != params.sessions:
        raise InvalidParams("gps_session_offsets_m needs one offset per session")
    rng = np.random.default_rng([seed, 1])
    S = params.sessions

    # plants
    per_row = max(1, int(np.floor(params.row_length_m / params.plant_spacing_m)))
    xs = (np.arange(per_row) + 0.5) * params.plant_spacing_m
    plant_xy, plant_rows = [], []
    for row in range(params.rows):
        jitter = rng.uniform(-params.plant_jitter_m, params.plant_jitter_m, (per_row, 2))
        plant_xy.append(np.column_stack([xs, np.full(per_row, row * params.row_spacing_m)]) + jitter)
        plant_rows.append(np.full(per_row, row))
    plant_xy = np.vstack(plant_xy)
    plant_rows = np.concatenate(plant_rows)
    vigor = rng.uniform(0.85, 1.0, len(plant_xy))
    heights = growth_heights(params, vigor)

    scene = SyntheticScene(
        params=params, seed=seed,
        landmark_positions=np.zeros((0, 3)), landmark_normals=np.zeros((0, 3)),
        landmark_labels=np.zeros(0, dtype=int), landmark_sessions=np.zeros(0, dtype=int),
        landmark_plants=np.zeros(0, dtype=int), landmark_colors=np.zeros((0, 3), dtype=np.uint8),
        textures=np.zeros((0, 3, 4)), drift=np.zeros((S, 0, 1, 4)),
        plant_xy=plant_xy, plant_rows=plant_rows, plant_heights=heights,
        undulation_phase=rng.uniform(0.0, 2 * np.pi, 2),
    )

    # ground, persistent across sessions
    x0, x1 = -3.0, params.row_length_m + 3.0
    y0 = -params.lateral_offset_m + 0.3
    y1 = (params.rows - 1) * params.row_spacing_m - params.lateral_offset_m + params.max_depth_m + 0.5
    n_ground = int(round((x1 - x0) * (y1 - y0) * params.ground_landmarks_per_m2))
    gx = rng.uniform(x0, x1, n_ground)
    gy = rng.uniform(y0, y1, n_ground)
    positions = [np.column_stack([gx, gy, scene.elevation(gx, gy)])]
    normals = [scene.ground_normal(gx, gy)]
    labels = [np.full(n_ground, GROUND)]
    sessions = [np.full(n_ground, -1)]
    plants = [np.full(n_ground, -1)]
    colors = [_albedo(rng, GROUND_ALBEDO, n_ground)]

    # canopy surface points, new every session
    for s in range(S):
        centers, radii = scene.plant_spheres(s)
        for p in range(len(plant_xy)):
            d = _hemisphere_directions(rng, params.plant_landmarks)
            positions.append(centers[p] + radii[p] * d)
            normals.append(d)
            labels.append(np.full(len(d), PLANT))
            sessions.append(np.full(len(d), s))
            plants.append(np.full(len(d), p))
            colors.append(_albedo(rng, PLANT_ALBEDO, len(d)))

    scene.landmark_positions = np.vstack(positions)
    scene.landmark_normals = np.vstack(normals)
    scene.landmark_labels = np.concatenate(labels)
    scene.landmark_sessions = np.concatenate(sessions)
    scene.landmark_plants = np.concatenate(plants)
    scene.landmark_colors = np.vstack(colors)
    N = len(scene.landmark_positions)

    textures = random_textures(rng, N)
    if params.prototype_fraction > 0:
        prototypes = random_textures(rng, params.prototypes)
        copies = rng.random(N) < params.prototype_fraction
        textures[copies] = prototypes[rng.integers(0, params.prototypes, int(copies.sum()))]
    scene.textures = textures
    drift = random_textures(rng, S * N, components=1).reshape(S, N, 1, 4)
    drift[..., 2] = params.descriptor_drift
    scene.drift = drift
    logger.info("Scene: %d ground landmarks, %d plants, %d canopy landmarks over %d sessions",
                n_ground, len(plant_xy), N - n_ground, S)
    return scene


class VehicleTrajectory:
    """Smooth analytic camera motion along one row; times are session-relative seconds."""

    def __init__(self, params: SimulationParams, row: int, rng: np.random.Generator):
        self.params = params
        self.row = row
        self.y_row = row * params.row_spacing_m - params.lateral_offset_m
        self.duration = params.row_length_m / params.speed_m_s
        self.mount = camera_mount(params.camera_pitch_deg)
        self.phase_y, self.phase_z = rng.uniform(0.0, 2 * np.pi, 2)
        self.phase_att = rng.uniform(0.0, 2 * np.pi, 3)

    def _lateral(self, t, order: int = 0):
        w = 2 * np.pi * LATERAL_FREQ
        a = self.params.lateral_wiggle_m
        arg = w * t + self.phase_y
        return [a * np.sin(arg), a * w * np.cos(arg), -a * w * w * np.sin(arg)][order]

    def _vertical(self, t, order: int = 0):
        w = 2 * np.pi * VERTICAL_FREQ
        a = self.params.vertical_wiggle_m
        arg = w * t + self.phase_z
        return [a * np.sin(arg), a * w * np.cos(arg), -a * w * w * np.sin(arg)][order]

    def position(self, t: float) -> np.ndarray:
        sx, sy = self.params.ground_slope
        x = self.params.speed_m_s * t
        y = self.y_row + self._lateral(t)
        z = sx * x + sy * y + self.params.camera_height_m + self._vertical(t)
        return np.array([x, y, z])

    def velocity(self, t: float) -> np.ndarray:
        sx, sy = self.params.ground_slope
        vx = self.params.speed_m_s
        vy = self._lateral(t, 1)
        return np.array([vx, vy, sx * vx + sy * vy + self._vertical(t, 1)])

    def acceleration(self, t: float) -> np.ndarray:
        _, sy = self.params.ground_slope
        ay = self._lateral(t, 2)
        return np.array([0.0, ay, sy * ay + self._vertical(t, 2)])

    def _attitude_angles(self, t: float):
        w = 2 * np.pi * ATTITUDE_FREQS
        arg = w * t + self.phase_att
        a = self.params.attitude_wiggle_rad
        return a * np.sin(arg), a * w * np.cos(arg)

    def attitude(self, t: float) -> Rotation3:
        angles, _ = self._attitude_angles(t)
        return Rotation3(rot_exp(angles).matrix @ self.mount)

    def angular_rate(self, t: float) -> np.ndarray:
        """Body-frame angular rate."""
        angles, rates = self._attitude_angles(t)
        return self.mount.T @ right_jacobian_so3(angles) @ rates

    def pose(self, t: float) -> Pose3:
        return Pose3(self.attitude(t), self.position(t))

    def state(self, t: float, bias=None) -> CameraState:
        return CameraState(self.attitude(t), self.position(t), self.velocity(t),
                           self.angular_rate(t), np.zeros(6) if bias is None else np.asarray(bias), t)

    def frame_times(self) -> np.ndarray:
        count = int(np.floor(self.duration * self.params.camera_rate_hz)) + 1
        return np.arange(count) / self.params.camera_rate_hz


def vehicle_trajectory(params: SimulationParams, session: int, row: int, seed: int = 7) -> VehicleTrajectory:
    return VehicleTrajectory(params, row, np.random.default_rng([seed, 2, session, row]))


@dataclass(eq=False)
class _FrameSurfaces:
    pose: Pose3
    anchors: np.ndarray
    normals: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    textures: np.ndarray


def surface_intensity(intrinsics: CameraIntrinsics, pose: Pose3, anchors, normals, e1, e2,
                      textures, pixels: np.ndarray) -> np.ndarray:
    """Texture seen through `pixels` (n, m, 2) on each feature's plane (n rows)."""
    ones = np.ones(pixels.shape[:2] + (1,))
    rays = np.concatenate([pixels, ones], axis=2) @ intrinsics.inverse_matrix.T @ pose.R.T
    c = pose.translation
    reach = np.einsum("nk,nk->n", anchors - c, normals)[:, None]
    s = reach / np.einsum("nmk,nk->nm", rays, normals)
    rel = c + s[..., None] * rays - anchors[:, None, :]
    u = np.einsum("nmk,nk->nm", rel, e1)
    v = np.einsum("nmk,nk->nm", rel, e2)
    return texture_value(textures, u, v)


class SimulatedSampler:
    """Exact patch renderer; also holds the quantized patch rasters of the row-session."""

    def __init__(self, intrinsics: CameraIntrinsics):
        self.intrinsics = intrinsics
        self.surfaces: Dict[FrameId, _FrameSurfaces] = {}
        self.patches = np.zeros((0, 16, 16), dtype=np.uint8)

    def sample(self, frame: Frame, feature_index: int, pixels: np.ndarray) -> np.ndarray:
        s = self.surfaces[frame.frame_id]
        i = slice(feature_index, feature_index + 1)
        px = np.atleast_2d(pixels)[None]
        return surface_intensity(self.intrinsics, s.pose, s.anchors[i], s.normals[i], s.e1[i],
                                 s.e2[i], s.textures[i], px)[0]


def _occluded(center: np.ndarray, points: np.ndarray, sphere_centers: np.ndarray,
              radii: np.ndarray) -> np.ndarray:
    if len(points) == 0 or len(sphere_centers) == 0:
        return np.zeros(len(points), dtype=bool)
    d = points - center
    f = center - sphere_centers
    a = np.einsum("mk,mk->m", d, d)[:, None]
    b = 2.0 * d @ f.T
    c = np.einsum("sk,sk->s", f, f) - radii**2
    disc = b * b - 4.0 * a * c[None, :]
    with np.errstate(invalid="ignore"):
        t1 = (-b - np.sqrt(disc)) / (2.0 * a)
    hit = (disc > 0) & (t1 > 1e-6) & (t1 < 1.0 - 1e-6)
    return hit.any(axis=1)


def visible_landmarks(scene: SyntheticScene, session: int, intrinsics: CameraIntrinsics,
                      pose: Pose3) -> Tuple[np.ndarray, np.ndarray]:
    """Indices and exact pixels of the session's landmarks seen from `pose`."""
    params = scene.params
    ids = scene.session_landmarks(session)
    points = scene.landmark_positions[ids]
    pixels, depth = project_points(intrinsics, pose, points)
    keep = (depth > MIN_DEPTH_M) & (depth < params.max_depth_m)
    keep &= np.isfinite(pixels).all(axis=1)
    keep[keep] = intrinsics.contains(pixels[keep], IMAGE_MARGIN_PX)
    to_camera = pose.translation - points[keep]
    facing = (np.einsum("mk,mk->m", scene.landmark_normals[ids[keep]], to_camera)
              > FACING_COSINE * np.linalg.norm(to_camera, axis=1))
    keep[keep] = facing

    centers, radii = scene.plant_spheres(session)
    near = np.linalg.norm(centers - pose.translation, axis=1) < params.max_depth_m + 1.0
    occluded = _occluded(pose.translation, points[keep], centers[near], radii[near])
    keep[keep] = ~occluded
    return ids[keep], pixels[keep]


def render_session(scene: SyntheticScene, trajectory: VehicleTrajectory, session: int,
                   intrinsics: CameraIntrinsics, rng: np.random.Generator,
                   frame_times: Optional[np.ndarray] = None) -> Tuple[List[Frame], SimulatedSampler]:
    """Feature observations of one row-session: pixels, descriptors, patches, colors."""
    params = scene.params
    key = RowSessionKey(session, trajectory.row)
    times = trajectory.frame_times() if frame_times is None else frame_times
    sampler = SimulatedSampler(intrinsics)
    frames, patch_stack = [], []
    offset = 0
    for k, t in enumerate(times):
        pose = trajectory.pose(t)
        frame_id = FrameId(key.session, key.row, k)
        ids, exact = visible_landmarks(scene, session, intrinsics, pose)
        noisy = exact + rng.normal(0.0, params.pixel_sigma_px, exact.shape)

        n_clutter = int(round(params.clutter_fraction * len(ids)))
        clutter_px = np.column_stack([
            rng.uniform(IMAGE_MARGIN_PX, intrinsics.width - IMAGE_MARGIN_PX, n_clutter),
            rng.uniform(IMAGE_MARGIN_PX, intrinsics.height - IMAGE_MARGIN_PX, n_clutter)])
        clutter_rays = (np.column_stack([clutter_px, np.ones(n_clutter)])
                        @ intrinsics.inverse_matrix.T @ pose.R.T)
        clutter_anchor = pose.translation + CLUTTER_DEPTH_M * clutter_rays
        clutter_normal = np.tile(-pose.R[:, 2], (n_clutter, 1))

        pixels = np.vstack([noisy, clutter_px])
        anchors = np.vstack([scene.landmark_positions[ids], clutter_anchor])
        normals = np.vstack([scene.landmark_normals[ids], clutter_normal])
        textures = np.concatenate([
            np.concatenate([scene.textures[ids], scene.drift[session, ids]], axis=1),
            np.concatenate([random_textures(rng, n_clutter), random_textures(rng, n_clutter, 1)], axis=1),
        ])
        landmark_ids = np.concatenate([ids, np.full(n_clutter, -1)])
        colors = np.vstack([scene.landmark_colors[ids], _albedo(rng, GROUND_ALBEDO, n_clutter)])

        order = rng.permutation(len(pixels))
        pixels, anchors, normals = pixels[order], anchors[order], normals[order]
        textures, landmark_ids, colors = textures[order], landmark_ids[order], colors[order]
        e1, e2 = tangent_basis(normals) if len(normals) else (normals, normals)

        if len(pixels):
            grids = np.stack([descriptor_grid(p) for p in pixels])
            rasters = np.stack([patch_grid(p) for p in pixels])
            descriptors = np.stack([patch_descriptor(row) for row in surface_intensity(
                intrinsics, pose, anchors, normals, e1, e2, textures, grids)])
            intensities = surface_intensity(intrinsics, pose, anchors, normals, e1, e2, textures, rasters)
            patches = np.clip(np.round(255.0 * intensities), 0, 255).astype(np.uint8).reshape(-1, 16, 16)
        else:
            descriptors = np.zeros((0, 64))
            patches = np.zeros((0, 16, 16), dtype=np.uint8)

        sampler.surfaces[frame_id] = _FrameSurfaces(pose, anchors, normals, e1, e2, textures)
        frames.append(Frame(frame_id, float(t), pixels, descriptors, landmark_ids.astype(np.int64),
                            colors, offset))
        patch_stack.append(patches)
        offset += len(pixels)

    sampler.patches = np.concatenate(patch_stack) if patch_stack else sampler.patches
    return frames, sampler


def synthesize_inertial_gps(trajectory, params: SimulationParams, bias, rng: np.random.Generator,
                            gps_offset_m: float = 0.0):
    """IMU (zero-order-hold samples evaluated at interval midpoints) and GPS streams.

    `trajectory` needs duration, position, acceleration, attitude and angular_rate.
    Returns (imu_t, gyro, accel, gps_t, gps_positions, gps_sigmas).
    """
    bias = np.asarray(bias, dtype=float)
    dt = 1.0 / params.imu_rate_hz
    count = int(np.floor((trajectory.duration + 0.2) * params.imu_rate_hz)) + 1
    imu_t = -0.1 + np.arange(count) * dt
    gyro = np.empty((count, 3))
    accel = np.empty((count, 3))
    for i, t in enumerate(imu_t + 0.5 * dt):
        R = trajectory.attitude(t).matrix
        gyro[i] = trajectory.angular_rate(t)
        accel[i] = R.T @ (trajectory.acceleration(t) - GRAVITY)
    gyro += bias[:3] + rng.normal(0.0, params.gyro_sigma_rad_s, gyro.shape)
    accel += bias[3:] + rng.normal(0.0, params.accel_sigma_m_s2, accel.shape)

    gps_count = int(np.floor((trajectory.duration - params.gps_time_offset_s) * params.gps_rate_hz)) + 1
    gps_t = params.gps_time_offset_s + np.arange(max(gps_count, 0)) / params.gps_rate_hz
    gps_pos = np.array([trajectory.position(t) for t in gps_t]).reshape(-1, 3)
    gps_pos += rng.normal(0.0, params.gps_sigma_m, gps_pos.shape)
    gps_pos[:, 2] += gps_offset_m
    return imu_t, gyro, accel, gps_t, gps_pos, np.full(len(gps_t), params.gps_sigma_m)


@dataclass(eq=False)
class RowSessionTruth:
    states: List[CameraState]
    bias: np.ndarray


@dataclass(eq=False)
class SimulatedField:
    """In-memory dataset with ground truth; row-sessions are rendered on first load."""
    scene: SyntheticScene
    intrinsics: CameraIntrinsics
    seed: int
    _cache: Dict[RowSessionKey, Tuple[RowSessionData, RowSessionTruth]] = field(default_factory=dict)

    @property
    def params(self) -> SimulationParams:
        return self.scene.params

    @property
    def rows(self) -> int:
        return self.params.rows

    @property
    def sessions(self) -> int:
        return self.params.sessions

    @property
    def session_days(self) -> List[int]:
        return self.params.session_days

    def keys(self) -> List[RowSessionKey]:
        return [RowSessionKey(s, r) for s in range(self.sessions) for r in range(self.rows)]

    def _render(self, key: RowSessionKey):
        if key not in self._cache:
            params = self.params
            rng = np.random.default_rng([self.seed, 3, key.session, key.row])
            trajectory = vehicle_trajectory(params, key.session, key.row, self.seed)
            bias = np.concatenate([rng.normal(0.0, params.gyro_bias_sigma_rad_s, 3),
                                   rng.normal(0.0, params.accel_bias_sigma_m_s2, 3)])
            frames, sampler = render_session(self.scene, trajectory, key.session, self.intrinsics, rng)
            offsets = params.gps_session_offsets_m
            gps_offset = offsets[key.session] if offsets else 0.0
            imu_t, gyro, accel, gps_t, gps_pos, gps_sig = synthesize_inertial_gps(
                trajectory, params, bias, rng, gps_offset)
            data = RowSessionData(key, self.intrinsics, frames, imu_t, gyro, accel,
                                  gps_t, gps_pos, gps_sig, sampler)
            truth = RowSessionTruth([trajectory.state(f.timestamp, bias) for f in frames], bias)
            logger.debug("Rendered %s: %d frames, %d observations", key.label, len(frames),
                         sum(len(f) for f in frames))
            self._cache[key] = (data, truth)
        return self._cache[key]

    def load(self, key: RowSessionKey) -> RowSessionData:
        return self._render(key)[0]

    def truth(self, key: RowSessionKey) -> RowSessionTruth:
        return self._render(key)[1]


def simulate_dataset(params: Optional[SimulationParams] = None, seed: int = 7) -> SimulatedField:
    params = params or SimulationParams()
    scene = generate_scene(seed, params)
    intrinsics = CameraIntrinsics(params.fx, params.fy, params.cx, params.cy, params.width, params.height)
    return SimulatedField(scene, intrinsics, seed)
