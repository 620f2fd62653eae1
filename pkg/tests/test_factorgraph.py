import numpy as np
import pytest

from conftest import looking_down
from exceptions import GaugeFreedom, InvalidParams, MissingVariable
from factorgraph import (FactorGraph, LinearFactor, NoiseModel, PoseValue, PriorFactor, ProjectionFactor,
                         VectorValue, check_gauge, check_jacobians, gate_outliers, graph_error, linearize,
                         optimize_lm, optimize_with_gating)
from geometry import Pose3, project
from models import CAMERA, LANDMARK, VECTOR, VariableKey


def vkey(i):
    return VariableKey(VECTOR, 0, 0, i)


def pkey(i):
    return VariableKey(CAMERA, 0, 0, i)


def lkey(i):
    return VariableKey(LANDMARK, 0, 0, i)


def _bundle(intrinsics, rng, cameras=6, landmarks=15, outlier=None):
    """Toy bundle adjustment: poses and points perturbed away from the truth."""
    poses = [looking_down([x, 0.02 * i, 2.0]) for i, x in enumerate(np.linspace(-0.6, 0.6, cameras))]
    points = np.column_stack([rng.uniform(-0.5, 0.5, (landmarks, 2)), rng.uniform(0.0, 0.2, landmarks)])
    graph = FactorGraph()
    for i, pose in enumerate(poses):
        noisy = Pose3(pose.rotation.retract(rng.normal(0, 0.01, 3)), pose.translation + rng.normal(0, 0.03, 3))
        graph.add_variable(pkey(i), PoseValue(noisy if i >= 2 else pose))
    for j, point in enumerate(points):
        graph.add_variable(lkey(j), VectorValue(point + rng.normal(0, 0.03, 3)))
    for i in range(2):
        graph.add_factor(PriorFactor(pkey(i), PoseValue(poses[i]), NoiseModel.isotropic(1e-4, 6)))
    projections = {}
    for i, pose in enumerate(poses):
        for j, point in enumerate(points):
            pixel = project(intrinsics, pose, point)
            if outlier == (i, j):
                pixel = pixel + np.array([30.0, -20.0])
            projections[i, j] = graph.add_factor(
                ProjectionFactor(pkey(i), lkey(j), intrinsics, pixel, NoiseModel.isotropic(1.0, 2)))
    return graph, poses, points, projections


class TestNoiseModel:
    def test_full_covariance_whitening(self):
        cov = np.array([[4.0, 1.0], [1.0, 2.0]])
        noise = NoiseModel.from_covariance(cov)
        S = noise.sqrt_info
        np.testing.assert_allclose(S.T @ S, np.linalg.inv(cov), atol=1e-12)
        np.testing.assert_allclose(noise.information(), np.linalg.inv(cov), atol=1e-12)

    def test_diagonal_whitening(self):
        noise = NoiseModel.diagonal([0.5, 2.0])
        np.testing.assert_allclose(noise.whiten(np.array([1.0, 1.0])), [2.0, 0.5])
        assert noise.dim == 2


class TestLinearProblems:
    def test_linear_least_squares_in_few_iterations(self):
        graph = FactorGraph()
        for i in range(3):
            graph.add_variable(vkey(i), VectorValue(np.zeros(2)))
        graph.add_factor(LinearFactor([vkey(0)], [np.eye(2)], [1.0, 2.0], NoiseModel.isotropic(0.1, 2)))
        A_rows, b_rows, w = [np.hstack([np.eye(2), np.zeros((2, 4))])], [np.array([1.0, 2.0])], [10.0]
        for i, (b, sigma) in enumerate([([0.5, -0.2], 0.2), ([0.1, 0.3], 0.5)]):
            graph.add_factor(LinearFactor([vkey(i), vkey(i + 1)], [-np.eye(2), np.eye(2)], b,
                                          NoiseModel.isotropic(sigma, 2), anchors=False))
            row = np.zeros((2, 6))
            row[:, 2 * i:2 * i + 2] = -np.eye(2)
            row[:, 2 * i + 2:2 * i + 4] = np.eye(2)
            A_rows.append(row)
            b_rows.append(np.asarray(b))
            w.append(1.0 / sigma)
        # an inconsistent extra measurement between 0 and 2
        graph.add_factor(LinearFactor([vkey(0), vkey(2)], [-np.eye(2), np.eye(2)], [0.8, 0.0],
                                      NoiseModel.isotropic(0.3, 2), anchors=False))
        A_rows.append(np.hstack([-np.eye(2), np.zeros((2, 2)), np.eye(2)]))
        b_rows.append(np.array([0.8, 0.0]))
        w.append(1.0 / 0.3)

        A = np.vstack([wi * Ai for wi, Ai in zip(w, A_rows)])
        b = np.concatenate([wi * bi for wi, bi in zip(w, b_rows)])
        expected = np.linalg.lstsq(A, b, rcond=None)[0]

        values, report = optimize_lm(graph)
        solution = np.concatenate([values[vkey(i)].vector for i in range(3)])
        np.testing.assert_allclose(solution, expected, atol=1e-5)
        assert report.iterations <= 4
        assert report.final_error < report.initial_error
        assert all(b <= a + 1e-12 for a, b in zip(report.errors, report.errors[1:]))

    def test_single_prior_converges_to_prior(self):
        graph = FactorGraph()
        graph.add_variable(vkey(0), VectorValue(np.array([5.0, -3.0, 2.0])))
        target = VectorValue(np.array([1.0, 2.0, 3.0]))
        graph.add_factor(PriorFactor(vkey(0), target, NoiseModel.isotropic(0.1, 3)))
        values, report = optimize_lm(graph)
        np.testing.assert_allclose(values[vkey(0)].vector, target.vector, atol=1e-6)
        assert report.final_error < 1e-10
        assert report.iterations <= 4

    def test_missing_variable(self):
        graph = FactorGraph()
        graph.add_factor(PriorFactor(vkey(0), VectorValue(np.zeros(2)), NoiseModel.isotropic(1.0, 2)))
        with pytest.raises(MissingVariable):
            linearize(graph)

    def test_gauge_freedom_detected(self):
        graph = FactorGraph()
        graph.add_variable(vkey(0), VectorValue(np.zeros(2)))
        graph.add_variable(vkey(1), VectorValue(np.zeros(2)))
        graph.add_factor(LinearFactor([vkey(0), vkey(1)], [-np.eye(2), np.eye(2)], [1.0, 0.0],
                                      NoiseModel.isotropic(1.0, 2), anchors=False))
        with pytest.raises(GaugeFreedom):
            optimize_lm(graph)

    def test_each_component_needs_an_anchor(self):
        graph = FactorGraph()
        for i in range(4):
            graph.add_variable(vkey(i), VectorValue(np.zeros(1)))
        graph.add_factor(LinearFactor([vkey(0)], [np.eye(1)], [1.0], NoiseModel.isotropic(1.0, 1)))
        graph.add_factor(LinearFactor([vkey(0), vkey(1)], [-np.eye(1), np.eye(1)], [1.0],
                                      NoiseModel.isotropic(1.0, 1), anchors=False))
        graph.add_factor(LinearFactor([vkey(2), vkey(3)], [-np.eye(1), np.eye(1)], [1.0],
                                      NoiseModel.isotropic(1.0, 1), anchors=False))
        with pytest.raises(GaugeFreedom):
            check_gauge(graph)
        graph.add_factor(LinearFactor([vkey(3)], [np.eye(1)], [0.0], NoiseModel.isotropic(1.0, 1)))
        check_gauge(graph)

    def test_disconnected_blocks_match_separate_solutions(self, rng):
        def chain(first, anchor):
            graph = FactorGraph()
            for i in range(first, first + 4):
                graph.add_variable(vkey(i), VectorValue(rng.normal(size=2)))
            graph.add_factor(LinearFactor([vkey(first)], [np.eye(2)], anchor, NoiseModel.isotropic(0.1, 2)))
            for i in range(first, first + 3):
                graph.add_factor(LinearFactor([vkey(i), vkey(i + 1)], [-np.eye(2), np.eye(2)],
                                              rng.normal(size=2), NoiseModel.isotropic(0.2, 2), anchors=False))
            graph.add_factor(LinearFactor([vkey(first), vkey(first + 3)], [-np.eye(2), np.eye(2)],
                                          rng.normal(size=2), NoiseModel.isotropic(0.5, 2), anchors=False))
            return graph

        left, right = chain(0, [1.0, 2.0]), chain(10, [-3.0, 0.5])
        joint = FactorGraph()
        for part in (left, right):
            for key, value in part.values.items():
                joint.add_variable(key, value)
            for factor in part.factors:
                joint.add_factor(factor)

        together, _ = optimize_lm(joint)
        for part in (left, right):
            alone, _ = optimize_lm(part)
            for key in part.values:
                np.testing.assert_allclose(together[key].vector, alone[key].vector, atol=1e-5)

    def test_empty_graph(self):
        values, report = optimize_lm(FactorGraph())
        assert values == {}
        assert report.reason == "empty"


class TestBundleAdjustment:
    def test_projection_factor_jacobians(self, intrinsics, rng):
        graph, *_ = _bundle(intrinsics, rng, cameras=3, landmarks=2)
        factor = next(f for f in graph.factors if isinstance(f, ProjectionFactor))
        assert check_jacobians(factor, graph.values) < 1e-5

    def test_converges_to_truth(self, intrinsics, rng):
        graph, poses, points, _ = _bundle(intrinsics, rng)
        values, report = optimize_lm(graph)
        assert report.final_error < 1e-8
        for j, point in enumerate(points):
            np.testing.assert_allclose(values[lkey(j)].vector, point, atol=1e-5)
        for i, pose in enumerate(poses):
            np.testing.assert_allclose(values[pkey(i)].pose.translation, pose.translation, atol=1e-5)

    def test_gating_removes_outlier(self, intrinsics, rng):
        graph, _, _, projections = _bundle(intrinsics, rng, cameras=10, outlier=(3, 4))
        values, reports = optimize_with_gating(graph, threshold_px=10.0, max_rounds=5)
        assert not projections[3, 4].active
        assert projections[3, 4].gated
        assert all(f.active for key, f in projections.items() if key != (3, 4))
        assert sum(r.deactivated for r in reports) >= 1
        assert reports[-1].final_error < 1e-6
        assert graph_error(graph, values) == pytest.approx(reports[-1].final_error)

    def test_landmark_behind_cameras_is_held_back(self, intrinsics, rng):
        graph, *_ = _bundle(intrinsics, rng)
        graph.add_variable(lkey(99), VectorValue(np.array([0.0, 0.0, 3.0])))
        behind = graph.add_factor(ProjectionFactor(pkey(0), lkey(99), intrinsics, [320.0, 240.0],
                                                   NoiseModel.isotropic(1.0, 2)))
        values, reports = optimize_with_gating(graph, threshold_px=10.0)
        assert not behind.active and behind.gated
        assert reports[0].deactivated >= 1
        assert reports[-1].final_error < 1e-6
        np.testing.assert_array_equal(values[lkey(99)].vector, [0.0, 0.0, 3.0])

    def test_gate_rejects_non_positive_threshold(self, intrinsics, rng):
        graph, *_ = _bundle(intrinsics, rng, cameras=3, landmarks=2)
        with pytest.raises(InvalidParams):
            gate_outliers(graph, graph.values, threshold_px=0.0)
        with pytest.raises(InvalidParams):
            optimize_with_gating(graph, threshold_px=-1.0)

    def test_gate_restores_factors_back_under_threshold(self, intrinsics, rng):
        graph, poses, points, projections = _bundle(intrinsics, rng, cameras=3, landmarks=3)
        truth = dict(graph.values)
        for i, pose in enumerate(poses):
            truth[pkey(i)] = PoseValue(pose)
        for j, point in enumerate(points):
            truth[lkey(j)] = VectorValue(point)
        factor = projections[2, 1]
        factor.active, factor.gated = False, True
        assert gate_outliers(graph, truth, threshold_px=10.0) == 0
        assert factor.active and not factor.gated
