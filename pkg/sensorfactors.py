"""
Measurement factors for single- and multi-row SLAM.

CameraState tangent layout (18): [dtheta, dp, dv, domega, dbias_gyro, dbias_accel].
The rotation is perturbed on the right, all other blocks additively; positions
and velocities are world-frame, angular rate and biases body-frame.
"""
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import (DegenerateGeometry, EmptyWindow, InsufficientData, InvalidParams,
                        NonMonotoneTime, NonPositiveDepth, TimestampOutsideBracket)
from factorgraph import Factor, NoiseModel, PriorFactor
from geometry import (CameraIntrinsics, Pose3, Rotation3, _triangulate_arrays, left_jacobian_so3,
                      right_jacobian_inverse_so3, right_jacobian_so3, rot_exp, skew)
from models import Frame, FrameId, RowSessionKey, Track, VariableKey, state_key

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])
COVARIANCE_FLOOR = 1e-12

ROT = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
OMEGA = slice(9, 12)
BIAS_GYRO = slice(12, 15)
BIAS_ACCEL = slice(15, 18)


@dataclass(frozen=True, eq=False)
class CameraState:
    rotation: Rotation3
    position: np.ndarray
    velocity: np.ndarray
    angular_rate: np.ndarray
    bias: np.ndarray
    timestamp: float

    dim = 18

    @classmethod
    def at_rest(cls, timestamp: float = 0.0, pose: Optional[Pose3] = None) -> "CameraState":
        pose = pose or Pose3.identity()
        return cls(pose.rotation, pose.translation.copy(), np.zeros(3), np.zeros(3),
                   np.zeros(6), timestamp)

    @property
    def pose(self) -> Pose3:
        return Pose3(self.rotation, self.position)

    def retract(self, delta) -> "CameraState":
        delta = np.asarray(delta, dtype=float)
        return CameraState(self.rotation.retract(delta[ROT]),
                           self.position + delta[POS],
                           self.velocity + delta[VEL],
                           self.angular_rate + delta[OMEGA],
                           self.bias + delta[12:18],
                           self.timestamp)

    def local(self, other: "CameraState") -> np.ndarray:
        return np.concatenate([
            Rotation3(self.rotation.matrix.T @ other.rotation.matrix).log(),
            other.position - self.position,
            other.velocity - self.velocity,
            other.angular_rate - self.angular_rate,
            other.bias - self.bias,
        ])

    def local_jacobian(self, other: "CameraState") -> np.ndarray:
        J = np.eye(18)
        J[ROT, ROT] = right_jacobian_inverse_so3(self.local(other)[ROT])
        return J


def _position_kernel(phi: np.ndarray) -> np.ndarray:
    """Integral of (1 - s) Exp(s phi) for s in [0, 1]."""
    angle = np.sqrt(phi @ phi)
    K = skew(phi)
    if angle < 1e-4:
        a = 1.0 / 6.0 - angle**2 / 120.0
        b = 1.0 / 24.0 - angle**2 / 720.0
    else:
        a = (angle - np.sin(angle)) / angle**3
        b = (0.5 - (1.0 - np.cos(angle)) / angle**2) / angle**2
    return 0.5 * np.eye(3) + a * K + b * (K @ K)


# IMU preintegration
@dataclass(frozen=True, eq=False)
class PreintegratedImu:
    delta_R: Rotation3
    delta_v: np.ndarray
    delta_p: np.ndarray
    dt: float
    bias: np.ndarray
    covariance: np.ndarray  # 9x9 over [dtheta, dv, dp]
    d_R_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    d_v_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    d_v_dba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    d_p_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    d_p_dba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def corrected(self, bias) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Deltas re-linearized to first order around a new bias estimate."""
        db = np.asarray(bias, dtype=float) - self.bias
        dbg, dba = db[:3], db[3:]
        R = self.delta_R.matrix @ rot_exp(self.d_R_dbg @ dbg).matrix
        v = self.delta_v + self.d_v_dbg @ dbg + self.d_v_dba @ dba
        p = self.delta_p + self.d_p_dbg @ dbg + self.d_p_dba @ dba
        return R, v, p

    def predict(self, state: CameraState, gravity=GRAVITY) -> Tuple[Rotation3, np.ndarray, np.ndarray]:
        R, dv, dp = self.corrected(state.bias)
        Ri = state.rotation.matrix
        g = np.asarray(gravity, dtype=float)
        dt = self.dt
        return (Rotation3(Ri @ R),
                state.velocity + g * dt + Ri @ dv,
                state.position + state.velocity * dt + 0.5 * g * dt * dt + Ri @ dp)

    def compose(self, other: "PreintegratedImu") -> "PreintegratedImu":
        """Concatenate two consecutive windows preintegrated with the same bias."""
        R1 = self.delta_R.matrix
        R2 = other.delta_R.matrix
        dt2 = other.dt
        A = np.eye(9)
        A[0:3, 0:3] = R2.T
        A[3:6, 0:3] = -R1 @ skew(other.delta_v)
        A[6:9, 0:3] = -R1 @ skew(other.delta_p)
        A[6:9, 3:6] = np.eye(3) * dt2
        B = np.zeros((9, 9))
        B[0:3, 0:3] = np.eye(3)
        B[3:6, 3:6] = R1
        B[6:9, 6:9] = R1
        covariance = A @ self.covariance @ A.T + B @ other.covariance @ B.T
        return PreintegratedImu(
            delta_R=Rotation3(R1 @ R2),
            delta_v=self.delta_v + R1 @ other.delta_v,
            delta_p=self.delta_p + self.delta_v * dt2 + R1 @ other.delta_p,
            dt=self.dt + dt2,
            bias=self.bias.copy(),
            covariance=covariance,
            d_R_dbg=R2.T @ self.d_R_dbg + other.d_R_dbg,
            d_v_dbg=self.d_v_dbg - R1 @ skew(other.delta_v) @ self.d_R_dbg + R1 @ other.d_v_dbg,
            d_v_dba=self.d_v_dba + R1 @ other.d_v_dba,
            d_p_dbg=(self.d_p_dbg + self.d_v_dbg * dt2
                     - R1 @ skew(other.delta_p) @ self.d_R_dbg + R1 @ other.d_p_dbg),
            d_p_dba=self.d_p_dba + self.d_v_dba * dt2 + R1 @ other.d_p_dba,
        )


def preintegrate(timestamps, gyro, accel, bias=None, t_start: Optional[float] = None,
                 t_end: Optional[float] = None, gyro_sigma: float = 0.0,
                 accel_sigma: float = 0.0) -> PreintegratedImu:
    """On-manifold preintegration of a zero-order-hold IMU stream.

    Sample k holds over [t_k, t_{k+1}); the last sample holds until `t_end`.
    The window defaults to [t_0, t_last]. Each held segment is integrated in
    closed form, so the result is exact for piecewise-constant inputs.
    """
    ts = np.asarray(timestamps, dtype=float)
    gyro = np.atleast_2d(np.asarray(gyro, dtype=float))
    accel = np.atleast_2d(np.asarray(accel, dtype=float))
    if len(ts) == 0:
        raise EmptyWindow("no IMU samples")
    if np.any(np.diff(ts) <= 0):
        raise NonMonotoneTime("IMU timestamps must be strictly increasing")
    bias = np.zeros(6) if bias is None else np.asarray(bias, dtype=float)
    start = ts[0] if t_start is None else float(t_start)
    end = ts[-1] if t_end is None else float(t_end)
    if start < ts[0] or end < start:
        raise EmptyWindow(f"window [{start}, {end}] not covered by samples from {ts[0]}")

    seg_start = np.maximum(ts, start)
    seg_end = np.minimum(np.append(ts[1:], np.inf), end)
    durations = seg_end - seg_start

    R = np.eye(3)
    v = np.zeros(3)
    p = np.zeros(3)
    cov = np.zeros((9, 9))
    d_R_dbg = np.zeros((3, 3))
    d_v_dbg = np.zeros((3, 3))
    d_v_dba = np.zeros((3, 3))
    d_p_dbg = np.zeros((3, 3))
    d_p_dba = np.zeros((3, 3))
    noise = np.diag([gyro_sigma**2] * 3 + [accel_sigma**2] * 3)
    total = 0.0

    for k in np.flatnonzero(durations > 0):
        dt = durations[k]
        w = gyro[k] - bias[:3]
        a = accel[k] - bias[3:]
        phi = w * dt
        dR = rot_exp(phi).matrix
        Jr = right_jacobian_so3(phi)
        a_skew = skew(a)

        A = np.eye(9)
        A[0:3, 0:3] = dR.T
        A[3:6, 0:3] = -R @ a_skew * dt
        A[6:9, 0:3] = -0.5 * R @ a_skew * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        B = np.zeros((9, 6))
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = R * dt
        B[6:9, 3:6] = 0.5 * R * dt * dt
        cov = A @ cov @ A.T + B @ noise @ B.T

        d_p_dba = d_p_dba + d_v_dba * dt - 0.5 * R * dt * dt
        d_p_dbg = d_p_dbg + d_v_dbg * dt - 0.5 * R @ a_skew @ d_R_dbg * dt * dt
        d_v_dba = d_v_dba - R * dt
        d_v_dbg = d_v_dbg - R @ a_skew @ d_R_dbg * dt
        d_R_dbg = dR.T @ d_R_dbg - Jr * dt

        p = p + v * dt + R @ (dt * dt * (_position_kernel(phi) @ a))
        v = v + R @ (dt * (left_jacobian_so3(phi) @ a))
        R = R @ dR
        total += dt

    return PreintegratedImu(Rotation3(R), v, p, total, bias.copy(), cov,
                            d_R_dbg, d_v_dbg, d_v_dba, d_p_dbg, d_p_dba)


class ImuFactor(Factor):
    """15-D residual: preintegrated rotation, velocity, position and bias random walk."""

    def __init__(self, key_i: VariableKey, key_j: VariableKey, pre: PreintegratedImu,
                 gravity=GRAVITY, bias_rw_sigmas=(1e-3, 1e-3)):
        cov = np.zeros((15, 15))
        cov[:9, :9] = pre.covariance + COVARIANCE_FLOOR * np.eye(9)
        cov[9:12, 9:12] = np.eye(3) * bias_rw_sigmas[0] ** 2
        cov[12:15, 12:15] = np.eye(3) * bias_rw_sigmas[1] ** 2
        super().__init__([key_i, key_j], NoiseModel.from_covariance(cov))
        self.pre = pre
        self.gravity = np.asarray(gravity, dtype=float)

    def unwhitened(self, values) -> np.ndarray:
        si = values[self.keys[0]]
        sj = values[self.keys[1]]
        dR, dv, dp = self.pre.corrected(si.bias)
        Ri = si.rotation.matrix
        dt = self.pre.dt
        g = self.gravity
        r_R = Rotation3(dR.T @ Ri.T @ sj.rotation.matrix).log()
        r_v = Ri.T @ (sj.velocity - si.velocity - g * dt) - dv
        r_p = Ri.T @ (sj.position - si.position - si.velocity * dt - 0.5 * g * dt * dt) - dp
        r_b = sj.bias - si.bias
        return np.concatenate([r_R, r_v, r_p, r_b])


def imu_factor(key_i: VariableKey, key_j: VariableKey, pre: PreintegratedImu,
               gravity=GRAVITY, bias_rw_sigmas=(1e-3, 1e-3)) -> ImuFactor:
    return ImuFactor(key_i, key_j, pre, gravity, bias_rw_sigmas)


# Gaussian-process motion prior (white noise on acceleration)
@dataclass(frozen=True)
class GpPriorParams:
    qc: float = 1.0

    def __post_init__(self):
        if not self.qc > 0:
            raise InvalidParams("Q_c must be positive")


def wnoa_transition(dt: float) -> np.ndarray:
    return np.array([[1.0, dt], [0.0, 1.0]])


def wnoa_covariance(dt: float, qc: float = 1.0) -> np.ndarray:
    return qc * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])


def wnoa_information(dt: float, qc: float = 1.0) -> np.ndarray:
    return np.array([[12.0 / dt**3, -6.0 / dt**2], [-6.0 / dt**2, 4.0 / dt]]) / qc


def gp_interpolation_weights(dt: float, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """(Lambda, Psi) such that x(tau) = Lambda x_a + Psi x_b for x = [p, v]."""
    if tau <= 0.0:
        return np.eye(2), np.zeros((2, 2))
    if tau >= dt:
        return np.zeros((2, 2)), np.eye(2)
    psi = wnoa_covariance(tau) @ wnoa_transition(dt - tau).T @ wnoa_information(dt)
    lam = wnoa_transition(tau) - psi @ wnoa_transition(dt)
    return lam, psi


def gp_interpolate(state_a: CameraState, state_b: CameraState, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior-mean position and velocity at time t between two states."""
    dt = state_b.timestamp - state_a.timestamp
    lam, psi = gp_interpolation_weights(dt, t - state_a.timestamp)
    position = (lam[0, 0] * state_a.position + lam[0, 1] * state_a.velocity
                + psi[0, 0] * state_b.position + psi[0, 1] * state_b.velocity)
    velocity = (lam[1, 0] * state_a.position + lam[1, 1] * state_a.velocity
                + psi[1, 0] * state_b.position + psi[1, 1] * state_b.velocity)
    return position, velocity


class GpPriorFactor(Factor):
    """Constant-velocity prior on (position, velocity) and (attitude, angular rate)."""

    def __init__(self, key_a: VariableKey, key_b: VariableKey, dt: float, params: GpPriorParams):
        if not dt > 0:
            raise NonMonotoneTime("GP prior needs increasing timestamps")
        block = wnoa_information(dt, params.qc)
        info = np.zeros((12, 12))
        info[0:6, 0:6] = np.kron(block, np.eye(3))
        info[6:12, 6:12] = np.kron(block, np.eye(3))
        super().__init__([key_a, key_b], NoiseModel.from_information(info))
        self.dt = dt
        self.params = params

    def _rotation_part(self, sa, sb):
        return Rotation3(sa.rotation.matrix.T @ sb.rotation.matrix).log()

    def unwhitened(self, values) -> np.ndarray:
        sa = values[self.keys[0]]
        sb = values[self.keys[1]]
        dt = self.dt
        phi = self._rotation_part(sa, sb)
        return np.concatenate([
            sb.position - sa.position - sa.velocity * dt,
            sb.velocity - sa.velocity,
            phi - sa.angular_rate * dt,
            sb.angular_rate - sa.angular_rate,
        ])

    def jacobians(self, values):
        sa = values[self.keys[0]]
        sb = values[self.keys[1]]
        dt = self.dt
        phi = self._rotation_part(sa, sb)
        I = np.eye(3)
        Ja = np.zeros((12, 18))
        Jb = np.zeros((12, 18))
        Ja[0:3, POS] = -I
        Ja[0:3, VEL] = -dt * I
        Jb[0:3, POS] = I
        Ja[3:6, VEL] = -I
        Jb[3:6, VEL] = I
        Ja[6:9, ROT] = -right_jacobian_inverse_so3(-phi)
        Ja[6:9, OMEGA] = -dt * I
        Jb[6:9, ROT] = right_jacobian_inverse_so3(phi)
        Ja[9:12, OMEGA] = -I
        Jb[9:12, OMEGA] = I
        return [Ja, Jb]


def gp_prior_factor(key_a: VariableKey, state_a: CameraState, key_b: VariableKey,
                    state_b: CameraState, params: GpPriorParams = GpPriorParams()) -> GpPriorFactor:
    return GpPriorFactor(key_a, key_b, state_b.timestamp - state_a.timestamp, params)


class GpsFactor(Factor):
    """GPS fix against the GP-interpolated position between two bracketing states.

    With an offset key the fix is compared to position + offset, the offset
    being a 3-vector shared by every fix of one session.
    """
    prior_like = True

    def __init__(self, key_a: VariableKey, key_b: VariableKey, t_a: float, t_b: float,
                 timestamp: float, position, sigma: float, offset_key: Optional[VariableKey] = None):
        keys = [key_a, key_b] if offset_key is None else [key_a, key_b, offset_key]
        super().__init__(keys, NoiseModel.isotropic(sigma, 3))
        self.t_a, self.t_b = t_a, t_b
        self.timestamp = timestamp
        self.position = np.asarray(position, dtype=float)
        self.sigma = sigma
        self.offset_key = offset_key
        self.lam, self.psi = gp_interpolation_weights(t_b - t_a, timestamp - t_a)

    def with_offset(self, offset_key: VariableKey) -> "GpsFactor":
        factor = GpsFactor(self.keys[0], self.keys[1], self.t_a, self.t_b, self.timestamp, self.position,
                           self.sigma, offset_key)
        factor.active = self.active
        return factor

    def unwhitened(self, values) -> np.ndarray:
        sa = values[self.keys[0]]
        sb = values[self.keys[1]]
        predicted = (self.lam[0, 0] * sa.position + self.lam[0, 1] * sa.velocity
                     + self.psi[0, 0] * sb.position + self.psi[0, 1] * sb.velocity)
        if self.offset_key is not None:
            predicted = predicted + values[self.offset_key].vector
        return predicted - self.position

    def jacobians(self, values):
        Ja = np.zeros((3, 18))
        Jb = np.zeros((3, 18))
        Ja[:, POS] = self.lam[0, 0] * np.eye(3)
        Ja[:, VEL] = self.lam[0, 1] * np.eye(3)
        Jb[:, POS] = self.psi[0, 0] * np.eye(3)
        Jb[:, VEL] = self.psi[0, 1] * np.eye(3)
        if self.offset_key is not None:
            return [Ja, Jb, np.eye(3)]
        return [Ja, Jb]


def gp_interpolated_gps_factor(key_a: VariableKey, state_a: CameraState, key_b: VariableKey,
                               state_b: CameraState, gps: Tuple[float, np.ndarray, float]) -> GpsFactor:
    timestamp, position, sigma = gps
    if not state_a.timestamp <= timestamp <= state_b.timestamp:
        raise TimestampOutsideBracket(
            f"GPS time {timestamp:.3f} outside [{state_a.timestamp:.3f}, {state_b.timestamp:.3f}]")
    return GpsFactor(key_a, key_b, state_a.timestamp, state_b.timestamp, timestamp, position, sigma)


class AngularRateFactor(Factor):
    def __init__(self, key: VariableKey, mean_gyro, sigma: float):
        super().__init__([key], NoiseModel.isotropic(sigma, 3))
        self.mean_gyro = np.asarray(mean_gyro, dtype=float)

    def unwhitened(self, values) -> np.ndarray:
        s = values[self.keys[0]]
        return s.angular_rate - (self.mean_gyro - s.bias[:3])

    def jacobians(self, values):
        J = np.zeros((3, 18))
        J[:, OMEGA] = np.eye(3)
        J[:, BIAS_GYRO] = np.eye(3)
        return [J]


def angular_rate_factor(key: VariableKey, mean_gyro, sigma: float = 0.01) -> AngularRateFactor:
    return AngularRateFactor(key, mean_gyro, sigma)


class BiasPriorFactor(Factor):
    prior_like = True

    def __init__(self, key: VariableKey, bias, sigma: float):
        super().__init__([key], NoiseModel.isotropic(sigma, 6))
        self.bias = np.asarray(bias, dtype=float)

    def unwhitened(self, values) -> np.ndarray:
        return values[self.keys[0]].bias - self.bias

    def jacobians(self, values):
        J = np.zeros((6, 18))
        J[:, 12:18] = np.eye(6)
        return [J]


def bias_prior_factor(key: VariableKey, bias=None, sigma: float = 0.05) -> BiasPriorFactor:
    return BiasPriorFactor(key, np.zeros(6) if bias is None else bias, sigma)


def state_prior_factor(key: VariableKey, state: CameraState, sigmas: Sequence[float]) -> PriorFactor:
    """Prior over the full state; `sigmas` per block (rotation, position, velocity,
    angular rate, gyro bias, accel bias) or per tangent dimension."""
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.size == 6:
        sigmas = np.repeat(sigmas, 3)
    return PriorFactor(key, state, NoiseModel.diagonal(sigmas))


# Structureless vision factor
class SmartVisionFactor(Factor):
    """Reprojection errors of one landmark, eliminated by triangulation.

    The Jacobian is projected onto the null space of the landmark Jacobian, so
    J^T J and J^T r equal the Schur complement of the landmark block.

    When the cameras no longer triangulate the track, the last triangulated
    landmark stands in for it. A landmark behind a camera raises NonPositiveDepth.
    """
    vision = True

    def __init__(self, keys: Sequence[VariableKey], intrinsics: Sequence[CameraIntrinsics],
                 pixels, sigma_px: float, track_id: int = -1):
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        super().__init__(keys, NoiseModel.isotropic(sigma_px, 2 * len(pixels)))
        self.pixels = pixels
        self.focal = np.array([[k.fx, k.fy] for k in intrinsics])
        self.principal = np.array([[k.cx, k.cy] for k in intrinsics])
        self.sigma = sigma_px
        self.track_id = track_id
        self.degenerate = False
        self.last_point: Optional[np.ndarray] = None

    def _cameras(self, values):
        states = [values[k] for k in self.keys]
        rotations = np.array([s.pose.R for s in states])
        centers = np.array([s.pose.translation for s in states])
        return rotations, centers

    def point(self, values) -> Optional[np.ndarray]:
        rotations, centers = self._cameras(values)
        try:
            point = _triangulate_arrays(rotations, centers, self.focal, self.principal, self.pixels)
        except DegenerateGeometry:
            self.degenerate = True
            return None
        self.degenerate = False
        return point

    def _evaluate(self, values, with_jacobian: bool):
        rotations, centers = self._cameras(values)
        try:
            X = _triangulate_arrays(rotations, centers, self.focal, self.principal, self.pixels)
            self.degenerate = False
            self.last_point = X
        except DegenerateGeometry:
            self.degenerate = True
            X = self.last_point
            if X is None:
                return None, None
        Rt = np.transpose(rotations, (0, 2, 1))
        pc = np.einsum("nij,nj->ni", Rt, X - centers)
        z = pc[:, 2]
        if np.any(z <= 0):
            raise NonPositiveDepth(f"track {self.track_id}: landmark behind a camera")
        uv = self.focal * pc[:, :2] / z[:, None] + self.principal
        r = (uv - self.pixels).ravel()
        if not with_jacobian:
            return r, None

        n = len(self.pixels)
        d_pc = np.zeros((n, 2, 3))
        d_pc[:, 0, 0] = self.focal[:, 0] / z
        d_pc[:, 0, 2] = -self.focal[:, 0] * pc[:, 0] / (z * z)
        d_pc[:, 1, 1] = self.focal[:, 1] / z
        d_pc[:, 1, 2] = -self.focal[:, 1] * pc[:, 1] / (z * z)
        pc_skew = np.zeros((n, 3, 3))
        pc_skew[:, 0, 1] = -pc[:, 2]
        pc_skew[:, 0, 2] = pc[:, 1]
        pc_skew[:, 1, 0] = pc[:, 2]
        pc_skew[:, 1, 2] = -pc[:, 0]
        pc_skew[:, 2, 0] = -pc[:, 1]
        pc_skew[:, 2, 1] = pc[:, 0]
        E_blocks = np.einsum("nij,njk->nik", d_pc, Rt)                   # (n, 2, 3)
        F_blocks = np.concatenate([np.einsum("nij,njk->nik", d_pc, pc_skew), -E_blocks], axis=2)
        E = E_blocks.reshape(2 * n, 3)
        EtE_inv = np.linalg.inv(E.T @ E)
        W = np.einsum("ij,njk->nik", EtE_inv, np.einsum("nji,njk->nik", E_blocks, F_blocks))
        QF = -np.einsum("ij,njk->nik", E, W)                              # (n, 2n, 6)
        for k in range(n):
            QF[k, 2 * k:2 * k + 2] += F_blocks[k]
        return r, QF

    def unwhitened(self, values) -> np.ndarray:
        r, _ = self._evaluate(values, with_jacobian=False)
        return np.zeros(self.dim) if r is None else r

    def linearize(self, values):
        try:
            r, QF = self._evaluate(values, with_jacobian=True)
        except NonPositiveDepth:
            r = None
        if r is None:
            return np.zeros(self.dim), [np.zeros((self.dim, values[k].dim)) for k in self.keys]
        Js = []
        for k, key in enumerate(self.keys):
            J = np.zeros((self.dim, values[key].dim))
            J[:, :6] = QF[k] / self.sigma
            Js.append(J)
        return r / self.sigma, Js

    def reprojection_errors(self, values) -> Optional[np.ndarray]:
        try:
            r, _ = self._evaluate(values, with_jacobian=False)
        except NonPositiveDepth:
            return np.full(len(self.pixels), np.inf)
        if r is None:
            return None
        return np.linalg.norm(r.reshape(-1, 2), axis=1)


def smart_vision_factor(track: Track, frames: Mapping[FrameId, Frame],
                        intrinsics: Union[CameraIntrinsics, Mapping[RowSessionKey, CameraIntrinsics]],
                        sigma_px: float = 0.5, min_images: int = 7) -> SmartVisionFactor:
    if len(track) < min_images:
        raise InsufficientData(
            f"track {track.track_id} spans {len(track)} images; at least {min_images} required")
    keys, cams, pixels = [], [], []
    for frame_id, index in track.observations:
        keys.append(state_key(frame_id))
        if isinstance(intrinsics, CameraIntrinsics):
            cams.append(intrinsics)
        else:
            cams.append(intrinsics[frame_id.row_session])
        pixels.append(frames[frame_id].pixels[index])
    return SmartVisionFactor(keys, cams, np.array(pixels), sigma_px, track.track_id)
