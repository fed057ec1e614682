"""Tests for the baseline bundle adjuster."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mcpa.exceptions import EmptyProblem
from mcpa.geometry import exp_so3
from mcpa.models import Mode, SynthSpec
from mcpa.services.baseline_ba import BundleAdjuster, baseline_ba_solve, dense_hessian_bytes
from mcpa.services.metrics import error_metrics
from mcpa.services.optimizer import lm_solve
from mcpa.services.synth import generate_problem

from tests.conftest import _make_problem, _make_track, _perturb


def _perturbed(**kwargs):
    problem = _make_problem(mode=Mode.BASELINE_BA, **kwargs)
    problem.poses = _perturb(problem.poses)
    return problem


def _numeric_jacobians(adjuster, state, h=1e-6):
    rotations, translations, points = state
    n_obs = len(adjuster.pose_id)
    J_pose = np.zeros((n_obs, 2, 6))
    J_point = np.zeros((n_obs, 2, 3))
    for k in range(6):
        for sign in (1.0, -1.0):
            r, t = rotations.copy(), translations.copy()
            step = np.zeros(6)
            step[k] = sign * h
            r = r @ exp_so3(step[:3])
            t = t + step[3:]
            J_pose[:, :, k] += sign * adjuster.residuals((r, t, points)) / (2 * h)
    for k in range(3):
        for sign in (1.0, -1.0):
            p = points.copy()
            p[:, k] += sign * h
            J_point[:, :, k] += sign * adjuster.residuals((rotations, translations, p)) / (2 * h)
    return J_pose, J_point


class TestBundleAdjuster:
    def test_zero_cost_at_ground_truth(self, problem):
        gt_points = np.array([t.world_hint for t in problem.tracks])
        adjuster = BundleAdjuster(problem, gt_points)
        assert adjuster.cost(adjuster.initial_state()) < 1e-16

    def test_jacobians_match_finite_differences(self):
        problem = _perturbed(n_poses=3, n_points=4)
        adjuster = BundleAdjuster(problem)
        state = adjuster.initial_state()
        _, J_pose, J_point = adjuster.jacobians(state)
        numeric_pose, numeric_point = _numeric_jacobians(adjuster, state)
        assert_allclose(J_pose, numeric_pose, rtol=1e-5, atol=1e-3)
        assert_allclose(J_point, numeric_point, rtol=1e-5, atol=1e-3)

    @pytest.mark.parametrize("lam", [1e-4, 1.0])
    def test_schur_step_matches_dense(self, lam):
        adjuster = BundleAdjuster(_perturbed(n_poses=4, n_points=10))
        system, _ = adjuster.linearize(adjuster.initial_state())
        assert_allclose(adjuster.solve(system, lam), adjuster.dense_step(system, lam), rtol=1e-6, atol=1e-9)

    def test_memory(self):
        adjuster = BundleAdjuster(_perturbed(n_poses=4, n_points=10))
        system, _ = adjuster.linearize(adjuster.initial_state())
        dense, stored, point_block = adjuster.memory(system)
        assert dense == (6 * 4 + 3 * 10) ** 2 * 8
        assert point_block == 72 * 10
        assert point_block < stored < dense

    def test_tracks_behind_a_camera_are_dropped(self):
        problem = _perturbed(n_poses=4, n_points=10)
        points = np.array([t.world_hint for t in problem.tracks])
        points[3] = [0.0, 0.0, -20.0]
        adjuster = BundleAdjuster(problem, points)
        assert adjuster.dropped_tracks == 1
        assert adjuster.n_points == len(problem.tracks) - 1
        assert 3 not in [t.track_id for t in adjuster.tracks]
        assert np.isfinite(adjuster.cost(adjuster.initial_state()))

    def test_state_behind_a_camera_is_infeasible(self):
        adjuster = BundleAdjuster(_perturbed(n_poses=3, n_points=5))
        rotations, translations, points = adjuster.initial_state()
        points[0] = [0.0, 0.0, -20.0]
        state = (rotations, translations, points)
        behind = adjuster.point_id == 0
        assert adjuster.cost(state) == np.inf
        residuals, J_pose, J_point = adjuster.jacobians(state)
        assert np.all(np.isfinite(residuals))
        assert np.all(residuals[behind] == 0.0)
        assert np.all(J_pose[behind] == 0.0)
        assert np.all(J_point[behind] == 0.0)
        assert_allclose(adjuster.residuals(state), residuals)

    def test_dense_hessian_bytes(self):
        assert dense_hessian_bytes(4) == 24 ** 2 * 8
        assert dense_hessian_bytes(4, 10) == 54 ** 2 * 8
        assert dense_hessian_bytes(200) / dense_hessian_bytes(200, 10000) < 0.1



class TestBaselineSolve:
    def test_noise_free_convergence(self):
        problem = _perturbed()
        poses, points, report = baseline_ba_solve(problem)
        metrics = error_metrics(poses, problem.gt_poses)
        assert metrics.rotation < 1e-6
        assert metrics.translation_abs < 1e-6
        gt_points = np.array([t.world_hint for t in problem.tracks])
        assert_allclose(points, gt_points, atol=1e-5)
        assert report.final_cost < report.initial_cost

    def test_gauge_pose_is_untouched(self):
        problem = _perturbed()
        poses, _, _ = baseline_ba_solve(problem)
        assert np.array_equal(poses[0].translation, problem.poses[0].translation)

    def test_dropped_track_rows_are_nan(self):
        problem = _perturbed()
        twin = _make_track(np.array([0.0, 0.0, 10.0]), problem.poses, problem.rig, [(1, 0), (1, 0)], track_id=99)
        problem.tracks.append(twin)
        _, points, report = baseline_ba_solve(problem)
        assert report.dropped_tracks == 1
        assert np.all(np.isnan(points[-1]))
        assert np.all(np.isfinite(points[:-1]))

    def test_no_initial_points(self):
        problem = _perturbed(n_points=2)
        with pytest.raises(EmptyProblem):
            BundleAdjuster(problem, np.full((2, 3), np.nan))

    def test_pose_only_memory_is_smaller(self):
        problem = _perturbed(n_poses=6, n_points=60)
        _, _, ba_report = baseline_ba_solve(problem)
        problem.mode = Mode.MCPA
        _, report = lm_solve(problem)
        assert report.hessian_bytes == dense_hessian_bytes(6)
        assert ba_report.hessian_bytes == dense_hessian_bytes(6, 60 - ba_report.dropped_tracks)
        assert report.hessian_bytes < ba_report.hessian_bytes


class TestSyntheticConvergence:
    def test_noise_free_forward_linear(self, settings):
        spec = SynthSpec(n_poses=20, n_points=400, sigma_max=0.0, seed=1)
        solver = settings.solver_settings(max_iters=100)
        data = generate_problem(spec, mode=Mode.BASELINE_BA, solver=solver, settings=settings)
        poses, points, report = baseline_ba_solve(data.problem)
        metrics = error_metrics(poses, data.gt_poses, points, data.gt_points)
        assert metrics.rotation < 1e-6
        assert metrics.translation_abs < 1e-6
        assert report.final_cost < 1e-8
        assert report.dropped_tracks < len(data.problem.tracks) // 10
