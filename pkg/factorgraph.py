"""
Nonlinear factor graph and batch Levenberg-Marquardt MAP solver.

Values live on manifolds: each value exposes `dim`, `retract(delta)`,
`local(other)` and `local_jacobian(other)`. Factors expose whitened
residuals and per-key Jacobians with respect to the tangent of each key;
factors without analytic Jacobians are differentiated numerically.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from exceptions import GaugeFreedom, InvalidParams, MissingVariable, NonPositiveDepth, SingularSystem
from geometry import (CameraIntrinsics, Pose3, Rotation3, projection_jacobians,
                      right_jacobian_inverse_so3)
from models import LANDMARK, VariableKey

logger = logging.getLogger(__name__)

LAMBDA_INITIAL = 1e-4
LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e10
DIAG_FLOOR = 1e-12
RELATIVE_DECREASE_TOL = 1e-9
STEP_TOL = 1e-10
FD_STEP = 1e-6


# Noise models
@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Gaussian noise; `sqrt_info` is 1-D for diagonal models, else a square root
    information matrix S with S^T S = Sigma^-1."""
    sqrt_info: np.ndarray

    @classmethod
    def isotropic(cls, sigma: float, dim: int) -> "NoiseModel":
        return cls(np.full(dim, 1.0 / sigma))

    @classmethod
    def diagonal(cls, sigmas) -> "NoiseModel":
        return cls(1.0 / np.asarray(sigmas, dtype=float))

    @classmethod
    def from_covariance(cls, covariance) -> "NoiseModel":
        cov = np.asarray(covariance, dtype=float)
        info = np.linalg.inv(0.5 * (cov + cov.T))
        L = np.linalg.cholesky(0.5 * (info + info.T))
        return cls(L.T)

    @classmethod
    def from_information(cls, information) -> "NoiseModel":
        info = np.asarray(information, dtype=float)
        return cls(np.linalg.cholesky(0.5 * (info + info.T)).T)

    @property
    def dim(self) -> int:
        return self.sqrt_info.shape[0]

    def whiten(self, v: np.ndarray) -> np.ndarray:
        if self.sqrt_info.ndim == 1:
            return self.sqrt_info * v
        return self.sqrt_info @ v

    def whiten_jacobian(self, J: np.ndarray) -> np.ndarray:
        if self.sqrt_info.ndim == 1:
            return self.sqrt_info[:, None] * J
        return self.sqrt_info @ J

    def information(self) -> np.ndarray:
        if self.sqrt_info.ndim == 1:
            return np.diag(self.sqrt_info ** 2)
        return self.sqrt_info.T @ self.sqrt_info


# Values
@dataclass(frozen=True, eq=False)
class VectorValue:
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.vector)

    def retract(self, delta) -> "VectorValue":
        return VectorValue(self.vector + delta)

    def local(self, other: "VectorValue") -> np.ndarray:
        return other.vector - self.vector

    def local_jacobian(self, other: "VectorValue") -> np.ndarray:
        return np.eye(self.dim)


@dataclass(frozen=True, eq=False)
class PoseValue:
    """Camera pose; tangent [dtheta (body), dt (world)]."""
    pose: Pose3

    dim = 6

    def retract(self, delta) -> "PoseValue":
        return PoseValue(Pose3(self.pose.rotation.retract(delta[:3]),
                               self.pose.translation + delta[3:6]))

    def local(self, other: "PoseValue") -> np.ndarray:
        dtheta = Rotation3(self.pose.R.T @ other.pose.R).log()
        return np.concatenate([dtheta, other.pose.translation - self.pose.translation])

    def local_jacobian(self, other: "PoseValue") -> np.ndarray:
        J = np.eye(6)
        J[:3, :3] = right_jacobian_inverse_so3(self.local(other)[:3])
        return J


# Factors
class Factor:
    prior_like = False
    vision = False

    def __init__(self, keys: Sequence[VariableKey], noise: NoiseModel):
        if noise.dim <= 0:
            raise InvalidParams("residual dimension must be positive")
        self.keys = tuple(keys)
        self.noise = noise
        self.active = True
        self.gated = False

    @property
    def dim(self) -> int:
        return self.noise.dim

    def unwhitened(self, values) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, values) -> Optional[List[np.ndarray]]:
        """Unwhitened Jacobians per key, or None to differentiate numerically."""
        return None

    def whitened(self, values) -> np.ndarray:
        return self.noise.whiten(self.unwhitened(values))

    def linearize(self, values) -> Tuple[np.ndarray, List[np.ndarray]]:
        r = self.whitened(values)
        Js = self.jacobians(values)
        if Js is None:
            return r, numerical_jacobians(self, values)
        return r, [self.noise.whiten_jacobian(J) for J in Js]


class PriorFactor(Factor):
    prior_like = True

    def __init__(self, key: VariableKey, prior, noise: NoiseModel):
        super().__init__([key], noise)
        self.prior = prior

    def unwhitened(self, values) -> np.ndarray:
        return self.prior.local(values[self.keys[0]])

    def jacobians(self, values):
        return [self.prior.local_jacobian(values[self.keys[0]])]


class LinearFactor(Factor):
    """r = sum_k A_k x_k - b on VectorValues."""

    def __init__(self, keys, blocks: Sequence[np.ndarray], b, noise: NoiseModel, anchors: bool = True):
        super().__init__(keys, noise)
        self.blocks = [np.atleast_2d(np.asarray(A, dtype=float)) for A in blocks]
        self.b = np.asarray(b, dtype=float)
        self.prior_like = anchors

    def unwhitened(self, values) -> np.ndarray:
        return sum(A @ values[k].vector for A, k in zip(self.blocks, self.keys)) - self.b

    def jacobians(self, values):
        return list(self.blocks)


def _pad(J: np.ndarray, dim: int) -> np.ndarray:
    if J.shape[1] == dim:
        return J
    out = np.zeros((J.shape[0], dim))
    out[:, :J.shape[1]] = J
    return out


class ProjectionFactor(Factor):
    """Reprojection of an explicit landmark variable into one camera."""
    vision = True

    def __init__(self, pose_key: VariableKey, landmark_key: VariableKey,
                 intrinsics: CameraIntrinsics, pixel, noise: NoiseModel):
        super().__init__([pose_key, landmark_key], noise)
        self.intrinsics = intrinsics
        self.pixel = np.asarray(pixel, dtype=float)

    def _parts(self, values):
        pose = values[self.keys[0]].pose
        point = values[self.keys[1]].vector
        return projection_jacobians(self.intrinsics, pose, point)

    def unwhitened(self, values) -> np.ndarray:
        pixel, _, _ = self._parts(values)
        return pixel - self.pixel

    def jacobians(self, values):
        _, J_pose, J_point = self._parts(values)
        return [_pad(J_pose, values[self.keys[0]].dim), J_point]

    def reprojection_errors(self, values) -> Optional[np.ndarray]:
        try:
            return np.array([np.linalg.norm(self.unwhitened(values))])
        except NonPositiveDepth:
            return np.array([np.inf])


def numerical_jacobians(factor: Factor, values, step: float = FD_STEP) -> List[np.ndarray]:
    """Central finite differences of the whitened residual."""
    local = {k: values[k] for k in factor.keys}
    Js = []
    for key in factor.keys:
        base = local[key]
        J = np.zeros((factor.dim, base.dim))
        for i in range(base.dim):
            delta = np.zeros(base.dim)
            delta[i] = step
            local[key] = base.retract(delta)
            plus = factor.whitened(local)
            local[key] = base.retract(-delta)
            minus = factor.whitened(local)
            J[:, i] = (plus - minus) / (2.0 * step)
        local[key] = base
        Js.append(J)
    return Js


def check_jacobians(factor: Factor, values, step: float = FD_STEP) -> float:
    """Max deviation between the factor's Jacobians and finite differences,
    relative to the largest finite-difference entry."""
    _, analytic = factor.linearize(values)
    numeric = numerical_jacobians(factor, values, step)
    scale = max(np.max(np.abs(N)) for N in numeric)
    deviation = max(np.max(np.abs(A - N)) for A, N in zip(analytic, numeric))
    return float(deviation / max(scale, 1e-12))


# Graph
class FactorGraph:
    def __init__(self):
        self.values: Dict[VariableKey, object] = {}
        self.factors: List[Factor] = []

    def add_variable(self, key: VariableKey, value) -> None:
        self.values[key] = value

    def add_factor(self, factor: Factor) -> Factor:
        self.factors.append(factor)
        return factor

    def extend(self, other: "FactorGraph") -> None:
        self.values.update(other.values)
        self.factors.extend(other.factors)

    def active_factors(self) -> List[Factor]:
        return [f for f in self.factors if f.active]

    def __len__(self):
        return len(self.factors)


@dataclass
class LinearSystem:
    H: sparse.csc_matrix
    g: np.ndarray
    ordering: Dict[VariableKey, Tuple[int, int]]
    error: float

    @property
    def dim(self) -> int:
        return len(self.g)


@dataclass
class SolveReport:
    initial_error: float
    final_error: float
    iterations: int
    reason: str
    residual_norms: List[float] = field(default_factory=list)
    deactivated: int = 0
    errors: List[float] = field(default_factory=list)


def _ordering(values, factors) -> Dict[VariableKey, Tuple[int, int]]:
    used = set()
    for f in factors:
        for key in f.keys:
            if key not in values:
                raise MissingVariable(f"factor references unassigned variable {key}")
            used.add(key)
    ordering = {}
    offset = 0
    # landmarks last
    for key in sorted(used, key=lambda k: (k.kind == LANDMARK, k)):
        dim = values[key].dim
        ordering[key] = (offset, dim)
        offset += dim
    return ordering


def linearize(graph: FactorGraph, values=None) -> LinearSystem:
    values = graph.values if values is None else values
    factors = graph.active_factors()
    ordering = _ordering(values, factors)
    n = sum(dim for _, dim in ordering.values())
    rows, cols, data = [], [], []
    g = np.zeros(n)
    error = 0.0
    for factor in factors:
        r, Js = factor.linearize(values)
        error += float(r @ r)
        idx = np.concatenate([np.arange(ordering[k][0], ordering[k][0] + ordering[k][1])
                              for k in factor.keys])
        J = np.hstack(Js)
        keep = np.any(J != 0.0, axis=0)
        if not keep.any():
            continue
        J = J[:, keep]
        idx = idx[keep]
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        data.append((J.T @ J).ravel())
        np.add.at(g, idx, J.T @ r)
    if rows:
        H = sparse.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, n)).tocsc()
    else:
        H = sparse.csc_matrix((n, n))
    return LinearSystem(H, g, ordering, error)


def graph_error(graph: FactorGraph, values=None) -> float:
    values = graph.values if values is None else values
    total = 0.0
    for factor in graph.active_factors():
        r = factor.whitened(values)
        total += float(r @ r)
    return total


def _trial_error(graph, values) -> float:
    try:
        return graph_error(graph, values)
    except NonPositiveDepth:
        return np.inf


def retract_values(values, ordering, delta) -> dict:
    updated = dict(values)
    for key, (offset, dim) in ordering.items():
        updated[key] = values[key].retract(delta[offset:offset + dim])
    return updated


def check_gauge(graph: FactorGraph) -> None:
    """Every connected component of active factors needs a prior-like factor."""
    factors = graph.active_factors()
    keys = sorted({k for f in factors for k in f.keys})
    if not keys:
        return
    index = {k: i for i, k in enumerate(keys)}
    rows, cols = [], []
    for f in factors:
        first = index[f.keys[0]]
        for k in f.keys[1:]:
            rows.append(first)
            cols.append(index[k])
    adjacency = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(keys), len(keys)))
    n_components, labels = connected_components(adjacency, directed=False)
    anchored = np.zeros(n_components, dtype=bool)
    for f in factors:
        if f.prior_like:
            anchored[labels[index[f.keys[0]]]] = True
    if not anchored.all():
        component = int(np.flatnonzero(~anchored)[0])
        example = keys[int(np.flatnonzero(labels == component)[0])]
        raise GaugeFreedom(f"component containing {example} has no prior-like factor")


def optimize_lm(graph: FactorGraph, values=None, max_iterations: int = 100,
                lambda_initial: float = LAMBDA_INITIAL):
    """Levenberg-Marquardt with Marquardt scaling; returns (values, SolveReport)."""
    check_gauge(graph)
    values = dict(graph.values if values is None else values)
    system = linearize(graph, values)
    error = system.error
    report = SolveReport(initial_error=error, final_error=error, iterations=0,
                         reason="max_iterations", errors=[error])
    if system.dim == 0:
        report.reason = "empty"
        report.residual_norms = _residual_norms(graph, values)
        return values, report

    lam = lambda_initial
    while report.iterations < max_iterations:
        diag = np.maximum(system.H.diagonal(), DIAG_FLOOR)
        accepted = False
        while True:
            damped = (system.H + sparse.diags(lam * diag)).tocsc()
            try:
                delta = splu(damped).solve(-system.g)
            except RuntimeError:
                delta = None
            if delta is None or not np.all(np.isfinite(delta)):
                if lam >= LAMBDA_MAX:
                    raise SingularSystem(f"damped normal equations unsolvable at lambda={lam:.1e}")
                lam *= 10.0
                continue
            candidate = retract_values(values, system.ordering, delta)
            new_error = _trial_error(graph, candidate)
            if new_error <= error:
                accepted = True
                break
            if lam >= LAMBDA_MAX:
                break
            lam *= 10.0
        if not accepted:
            report.reason = "no_improvement"
            break

        report.iterations += 1
        step = float(np.linalg.norm(delta))
        decrease = error - new_error
        previous = error
        values, error = candidate, new_error
        report.errors.append(error)
        lam = max(lam / 10.0, LAMBDA_MIN)
        logger.debug("LM iteration %d: error %.6e step %.3e lambda %.1e",
                     report.iterations, error, step, lam)
        if decrease <= RELATIVE_DECREASE_TOL * previous:
            report.reason = "relative_decrease"
            break
        if step < STEP_TOL:
            report.reason = "small_step"
            break
        system = linearize(graph, values)

    report.final_error = error
    report.residual_norms = _residual_norms(graph, values)
    return values, report


def _residual_norms(graph, values) -> List[float]:
    norms = []
    for f in graph.factors:
        if not f.active:
            norms.append(float("nan"))
            continue
        try:
            norms.append(float(np.linalg.norm(f.whitened(values))))
        except NonPositiveDepth:
            norms.append(float("inf"))
    return norms


def _gate(graph: FactorGraph, values, threshold_px: float) -> Tuple[int, int]:
    deactivated = reactivated = 0
    for factor in graph.factors:
        if not factor.vision:
            continue
        errors = factor.reprojection_errors(values)
        if errors is None:
            continue
        inlier = len(errors) == 0 or float(np.max(errors)) <= threshold_px
        if factor.active and not inlier:
            factor.active = False
            factor.gated = True
            deactivated += 1
        elif not factor.active and factor.gated and inlier:
            factor.active = True
            factor.gated = False
            reactivated += 1
    return deactivated, reactivated


def _hold_back_unprojectable(graph: FactorGraph, values) -> int:
    held = 0
    for factor in graph.factors:
        if not (factor.vision and factor.active):
            continue
        errors = factor.reprojection_errors(values)
        if errors is not None and not np.all(np.isfinite(errors)):
            factor.active = False
            factor.gated = True
            held += 1
    return held


def gate_outliers(graph: FactorGraph, values, threshold_px: float = 10.0) -> int:
    """Deactivate vision factors whose worst reprojection error exceeds the
    threshold; previously gated factors back under it are restored."""
    if threshold_px <= 0:
        raise InvalidParams("threshold_px must be positive")
    deactivated, _ = _gate(graph, values, threshold_px)
    return deactivated


def optimize_with_gating(graph: FactorGraph, threshold_px: float = 10.0, max_rounds: int = 5,
                         max_iterations: int = 100, values=None):
    """Alternate optimize_lm and gating until the active set stops changing.

    Vision factors with a landmark behind a camera at the start are gated
    before the first round."""
    if threshold_px <= 0:
        raise InvalidParams("threshold_px must be positive")
    values = dict(graph.values if values is None else values)
    reports = []
    settled = False
    held = _hold_back_unprojectable(graph, values)
    for round_index in range(max_rounds):
        values, report = optimize_lm(graph, values, max_iterations=max_iterations)
        deactivated, reactivated = _gate(graph, values, threshold_px)
        report.deactivated = deactivated
        if round_index == 0:
            report.deactivated += held
        reports.append(report)
        logger.debug("gating round %d: %d deactivated, %d restored",
                     round_index + 1, deactivated, reactivated)
        if deactivated == 0 and reactivated == 0:
            settled = True
            break
    if not settled:
        values, report = optimize_lm(graph, values, max_iterations=max_iterations)
        reports.append(report)
    return values, reports
