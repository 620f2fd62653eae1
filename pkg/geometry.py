"""
Rigid-body geometry for the reconstruction pipeline.

Conventions
    Pose3 maps local coordinates into its parent frame: X_parent = R X_local + t.
    A camera pose is camera-to-world, so its translation is the camera center.
    Camera axes: x right, y down, z along the optical axis.
    Manifold updates perturb rotations on the right: R <- R Exp(delta).
    A PlaneEstimate (n, d) in a frame F is the set {X_F : n.X_F + d = 0} with
    n pointing toward the origin of F, so d > 0 for a plane in front of it.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from exceptions import DegenerateGeometry, InvalidParams, NonPositiveDepth

logger = logging.getLogger(__name__)

SMALL_ANGLE = 1e-6


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _exp_so3(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = np.sqrt(phi @ phi)
    K = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def _log_so3(R: np.ndarray) -> np.ndarray:
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    cos_angle = 0.5 * (np.trace(R) - 1.0)
    sin_norm = np.sqrt(w @ w)  # 2 sin(angle)
    angle = np.arctan2(0.5 * sin_norm, cos_angle)
    if angle < SMALL_ANGLE:
        return 0.5 * w * (1.0 + angle * angle / 6.0)
    if cos_angle < -0.9:
        # sin(angle) is poorly conditioned near pi, take the axis from the symmetric part
        S = 0.5 * (R + R.T) - cos_angle * np.eye(3)
        col = int(np.argmax(np.diag(S)))
        axis = S[:, col] / np.sqrt(S[col, col] * (1.0 - cos_angle))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return angle * axis
    return angle / sin_norm * w


def left_jacobian_so3(phi) -> np.ndarray:
    """Integral of Exp(s phi) for s in [0, 1]."""
    phi = np.asarray(phi, dtype=float)
    angle = np.sqrt(phi @ phi)
    K = skew(phi)
    if angle < 1e-4:
        return np.eye(3) + (0.5 - angle**2 / 24.0) * K + (1.0 / 6.0 - angle**2 / 120.0) * (K @ K)
    return (np.eye(3)
            + (1.0 - np.cos(angle)) / angle**2 * K
            + (angle - np.sin(angle)) / angle**3 * (K @ K))


def right_jacobian_so3(phi) -> np.ndarray:
    return left_jacobian_so3(-np.asarray(phi, dtype=float))


def right_jacobian_inverse_so3(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = np.sqrt(phi @ phi)
    K = skew(phi)
    if angle < 1e-4:
        return np.eye(3) + 0.5 * K + (1.0 / 12.0) * (K @ K)
    coeff = 1.0 / angle**2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * K + coeff * (K @ K)


@dataclass(frozen=True, eq=False)
class Rotation3:
    """Element of SO(3), stored as an orthonormal matrix."""
    matrix: np.ndarray

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def from_matrix(cls, matrix) -> "Rotation3":
        # nearest rotation in the Frobenius sense
        u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=float))
        R = u @ vt
        if np.linalg.det(R) < 0:
            u[:, -1] = -u[:, -1]
            R = u @ vt
        return cls(R)

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T.copy())

    def apply(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)

    def log(self) -> np.ndarray:
        return _log_so3(self.matrix)

    def retract(self, delta) -> "Rotation3":
        return Rotation3(self.matrix @ _exp_so3(delta))

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.matrix
        return (np.max(np.abs(R.T @ R - np.eye(3))) <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol)


def rot_exp(axis_angle) -> Rotation3:
    return Rotation3(_exp_so3(np.asarray(axis_angle, dtype=float)))


def rot_log(rotation) -> np.ndarray:
    """Axis-angle of a Rotation3 or a 3x3 rotation matrix."""
    if isinstance(rotation, Rotation3):
        return rotation.log()
    return Rotation3(np.asarray(rotation, dtype=float)).log()


@dataclass(frozen=True, eq=False)
class Pose3:
    rotation: Rotation3
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "Pose3":
        return cls(Rotation3.identity(), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t) -> "Pose3":
        return cls(Rotation3(np.asarray(R, dtype=float)), np.asarray(t, dtype=float))

    @property
    def R(self) -> np.ndarray:
        return self.rotation.matrix

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.rotation.compose(other.rotation),
                     self.R @ other.translation + self.translation)

    def inverse(self) -> "Pose3":
        Rt = self.R.T
        return Pose3(Rotation3(Rt.copy()), -Rt @ self.translation)

    def transform_from(self, point) -> np.ndarray:
        """Local point(s) to world; accepts (3,) or (n, 3)."""
        return np.asarray(point, dtype=float) @ self.R.T + self.translation

    def transform_to(self, point) -> np.ndarray:
        return (np.asarray(point, dtype=float) - self.translation) @ self.R

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def world_to_camera(self) -> np.ndarray:
        """3x4 [R^T | -R^T t]."""
        Rt = self.R.T
        return np.hstack([Rt, (-Rt @ self.translation)[:, None]])


def relative_pose(pose1: Pose3, pose2: Pose3) -> Pose3:
    """Pose mapping camera-1 coordinates into camera-2 coordinates (R12, t12)."""
    return pose2.inverse().compose(pose1)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParams("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidParams("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def contains(self, pixels, margin: float = 0.0) -> np.ndarray:
        px = np.atleast_2d(pixels)
        return ((px[:, 0] >= margin) & (px[:, 0] <= self.width - margin)
                & (px[:, 1] >= margin) & (px[:, 1] <= self.height - margin))


def project(intrinsics: CameraIntrinsics, pose: Pose3, point) -> np.ndarray:
    pc = pose.transform_to(point)
    if pc[2] <= 0:
        raise NonPositiveDepth(f"point at camera depth {pc[2]:.3g}")
    return np.array([intrinsics.fx * pc[0] / pc[2] + intrinsics.cx,
                     intrinsics.fy * pc[1] / pc[2] + intrinsics.cy])


def project_points(intrinsics: CameraIntrinsics, pose: Pose3, points) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns (pixels Nx2, depths N); pixels of points
    with non-positive depth are NaN."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pc = (pts - pose.translation) @ pose.R
    depth = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * pc[:, 0] / depth + intrinsics.cx
        v = intrinsics.fy * pc[:, 1] / depth + intrinsics.cy
    pixels = np.column_stack([u, v])
    pixels[depth <= 0] = np.nan
    return pixels, depth


def projection_jacobians(intrinsics: CameraIntrinsics, pose: Pose3, point):
    """Pixel and its derivatives w.r.t. the pose tangent [dtheta, dt] (2x6)
    and the world point (2x3)."""
    Rt = pose.R.T
    pc = Rt @ (np.asarray(point, dtype=float) - pose.translation)
    x, y, z = pc
    if z <= 0:
        raise NonPositiveDepth(f"point at camera depth {z:.3g}")
    fx, fy = intrinsics.fx, intrinsics.fy
    pixel = np.array([fx * x / z + intrinsics.cx, fy * y / z + intrinsics.cy])
    d_pc = np.array([[fx / z, 0.0, -fx * x / (z * z)],
                     [0.0, fy / z, -fy * y / (z * z)]])
    J_pose = np.hstack([d_pc @ skew(pc), -d_pc @ Rt])
    J_point = d_pc @ Rt
    return pixel, J_pose, J_point


def _triangulate_arrays(rotations: np.ndarray, centers: np.ndarray, focal: np.ndarray,
                        principal: np.ndarray, pixels: np.ndarray,
                        max_iterations: int = 10, tolerance: float = 1e-12) -> np.ndarray:
    """DLT followed by Gauss-Newton on reprojection error.

    rotations (n,3,3) camera-to-world, centers (n,3), focal/principal (n,2), pixels (n,2).
    """
    n = len(pixels)
    if n < 2:
        raise DegenerateGeometry("triangulation needs at least two observations")
    shift = centers.mean(axis=0)
    local = centers - shift
    scale = max(1.0, float(np.max(np.abs(centers))))
    if np.max(np.linalg.norm(local - local[0], axis=1)) <= 1e-9 * scale:
        raise DegenerateGeometry("zero baseline")

    Rt = np.transpose(rotations, (0, 2, 1))
    P = np.concatenate([Rt, -np.einsum("nij,nj->ni", Rt, local)[:, :, None]], axis=2)
    xn = (pixels - principal) / focal
    A = np.empty((2 * n, 4))
    A[0::2] = xn[:, 0:1] * P[:, 2] - P[:, 0]
    A[1::2] = xn[:, 1:2] * P[:, 2] - P[:, 1]
    _, s, vt = np.linalg.svd(A)
    if s[-2] <= 1e-10 * s[0]:
        raise DegenerateGeometry("rank-deficient DLT system")
    Xh = vt[-1]
    if abs(Xh[3]) <= 1e-12 * np.linalg.norm(Xh[:3]):
        raise DegenerateGeometry("point at infinity")
    X = Xh[:3] / Xh[3]

    H = None
    for _ in range(max_iterations):
        pc = np.einsum("nij,nj->ni", Rt, X - local)
        z = pc[:, 2]
        if np.any(z <= 0):
            raise DegenerateGeometry("point behind a camera")
        uv = focal * pc[:, :2] / z[:, None] + principal
        r = (uv - pixels).reshape(-1)
        d_pc = np.zeros((n, 2, 3))
        d_pc[:, 0, 0] = focal[:, 0] / z
        d_pc[:, 0, 2] = -focal[:, 0] * pc[:, 0] / (z * z)
        d_pc[:, 1, 1] = focal[:, 1] / z
        d_pc[:, 1, 2] = -focal[:, 1] * pc[:, 1] / (z * z)
        J = np.einsum("nij,njk->nik", d_pc, Rt).reshape(-1, 3)
        H = J.T @ J
        try:
            delta = np.linalg.solve(H, -J.T @ r)
        except np.linalg.LinAlgError:
            raise DegenerateGeometry("singular triangulation system")
        X = X + delta
        if np.sqrt(delta @ delta) <= tolerance * (1.0 + np.sqrt(X @ X)):
            break
    if H is not None and np.linalg.cond(H) > 1e12:
        raise DegenerateGeometry("ill-conditioned triangulation")
    pc = np.einsum("nij,nj->ni", Rt, X - local)
    if np.any(pc[:, 2] <= 0):
        raise DegenerateGeometry("point behind a camera")
    return X + shift


def triangulate(observations: Sequence[Tuple[CameraIntrinsics, Pose3, np.ndarray]]) -> np.ndarray:
    if len(observations) < 2:
        raise DegenerateGeometry("triangulation needs at least two observations")
    rotations = np.array([pose.R for _, pose, _ in observations])
    centers = np.array([pose.translation for _, pose, _ in observations])
    focal = np.array([[k.fx, k.fy] for k, _, _ in observations])
    principal = np.array([[k.cx, k.cy] for k, _, _ in observations])
    pixels = np.array([np.asarray(px, dtype=float) for _, _, px in observations])
    return _triangulate_arrays(rotations, centers, focal, principal, pixels)


@dataclass(frozen=True, eq=False)
class PlaneEstimate:
    normal: np.ndarray
    distance: float

    def in_frame(self, pose: Pose3) -> "PlaneEstimate":
        """Re-express a plane given in the parent frame inside the frame of `pose`,
        keeping the normal oriented toward that frame's origin."""
        n = pose.R.T @ self.normal
        d = float(self.distance + self.normal @ pose.translation)
        if d < 0:
            n, d = -n, -d
        return PlaneEstimate(n, d)

    def signed_distance(self, points) -> np.ndarray:
        """Positive on the side the normal points to."""
        return np.atleast_2d(points) @ self.normal + self.distance


def fit_plane_local(points, reference: Optional[Pose3] = None) -> PlaneEstimate:
    """Least-squares plane through `points`, expressed in the reference camera
    frame (world origin when no reference is given)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 3:
        raise DegenerateGeometry("plane fit needs at least three points")
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise DegenerateGeometry("collinear points")
    normal = vt[2] / np.linalg.norm(vt[2])
    world = PlaneEstimate(normal, float(-normal @ centroid))
    return world.in_frame(reference if reference is not None else Pose3.identity())


def induced_homography(k1: CameraIntrinsics, k2: CameraIntrinsics,
                       relative: Pose3, plane: PlaneEstimate) -> np.ndarray:
    """H = K2 (R12 - t12 n^T / d) K1^-1 for a plane expressed in camera-1 coordinates."""
    if plane.distance <= 0:
        raise DegenerateGeometry("plane passes through or behind the first camera")
    M = relative.R - np.outer(relative.translation, plane.normal) / plane.distance
    return k2.matrix @ M @ k1.inverse_matrix


def transfer(H: np.ndarray, pixels) -> np.ndarray:
    px = np.atleast_2d(np.asarray(pixels, dtype=float))
    homog = np.column_stack([px, np.ones(len(px))]) @ H.T
    return homog[:, :2] / homog[:, 2:3]


def local_neighborhood(tree: cKDTree, center, k: int = 12, radius: float = 0.5) -> np.ndarray:
    """Indices of up to k points of `tree` within `radius` of `center`."""
    k = min(k, tree.n)
    dist, idx = tree.query(np.asarray(center, dtype=float), k=k, distance_upper_bound=radius)
    idx = np.atleast_1d(idx)
    dist = np.atleast_1d(dist)
    return idx[np.isfinite(dist)]


def align_rigid(source, target) -> Pose3:
    """Rigid transform T minimizing |T(source) - target| (Kabsch / Umeyama without scale)."""
    src = np.atleast_2d(np.asarray(source, dtype=float))
    dst = np.atleast_2d(np.asarray(target, dtype=float))
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s)
    u, _, vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(u @ vt) < 0:
        D[2, 2] = -1.0
    R = u @ D @ vt
    return Pose3(Rotation3(R), mu_d - R @ mu_s)


def points_to_array(points: List) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 3)
