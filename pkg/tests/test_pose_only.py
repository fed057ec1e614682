"""Tests for the pose-only constraint: depths, residuals and analytic Jacobians."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mcpa.exceptions import DegenerateParallax
from mcpa.geometry import apply_right_perturbation
from mcpa.models import BasePair, Perturbation, Pose
from mcpa.pose_only import (
    reconstruct_from_base,
    relative_pose,
    residual_jacobians,
    residual_left,
    residual_right,
    scale_left,
    scale_right,
)

from tests.conftest import _make_poses, _make_rig, _make_track

SLOTS = [(0, 0), (1, 1), (2, 0), (3, 1), (1, 0), (0, 1)]
STEP = 1e-6


def _track(seed: int = 0, noise: float = 0.0, base=(0, 1)):
    rng = np.random.default_rng(seed)
    rig = _make_rig(2)
    poses = _make_poses(4, seed=seed, angle=0.1, shift=1.0)
    point = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(8, 14)])
    pixel_noise = rng.normal(scale=noise, size=(len(SLOTS), 2)) if noise else None
    track = _make_track(point, poses, rig, SLOTS, noise=pixel_noise)
    track.base = BasePair(*base)
    return track, poses, point


def _finite_difference(track, i, poses, pose_id, right):
    evaluate = residual_right if right else residual_left
    columns = []
    for k in range(6):
        step = np.zeros(6)
        step[k] = STEP
        plus, minus = list(poses), list(poses)
        plus[pose_id] = apply_right_perturbation(poses[pose_id], Perturbation.from_vector(step))
        minus[pose_id] = apply_right_perturbation(poses[pose_id], Perturbation.from_vector(-step))
        columns.append((evaluate(track, i, plus).e - evaluate(track, i, minus).e) / (2 * STEP))
    return np.column_stack(columns)


class TestRelativePose:
    def test_maps_body_a_to_body_b(self):
        a, b = _make_poses(2, seed=3)
        r_ab, t_ab = relative_pose(a, b)
        X = np.array([1.0, -2.0, 7.0])
        assert_allclose(r_ab @ a.transform(X) + t_ab, b.transform(X), atol=1e-12)


class TestScale:
    def test_depth_reconstructs_point(self):
        track, poses, point = _track()
        l, r = track.ray(0), track.ray(1)
        result = scale_left(l, r, poses[l.pose_id], poses[r.pose_id])
        assert_allclose(reconstruct_from_base(l, poses[l.pose_id], result.s), point, atol=1e-9)
        assert result.s == pytest.approx(result.lam / result.theta)

    def test_equal_depth_across_partners(self):
        track, poses, _ = _track(seed=5)
        l = track.ray(0)
        depths = [
            scale_left(l, track.ray(j), poses[l.pose_id], poses[track.ray(j).pose_id]).s
            for j in range(1, len(track))
        ]
        assert_allclose(depths, depths[0], rtol=1e-10)

    def test_scale_right_swaps_roles(self):
        track, poses, _ = _track(seed=2)
        l, r = track.ray(0), track.ray(1)
        pl, pr = poses[l.pose_id], poses[r.pose_id]
        assert scale_right(l, r, pl, pr).s == pytest.approx(scale_left(r, l, pr, pl).s, rel=1e-14)

    def test_same_pose_pair_uses_rig_baseline(self):
        # observations 1 and 4 share pose 1 through different cameras
        track, poses, point = _track(seed=4)
        a, b = track.ray(4), track.ray(1)
        result = scale_left(a, b, poses[1], poses[1])
        assert_allclose(reconstruct_from_base(a, poses[1], result.s), point, atol=1e-8)

    def test_parallel_rays(self):
        track, poses, _ = _track()
        ray = track.ray(0)
        with pytest.raises(DegenerateParallax):
            scale_left(ray, ray, poses[0], poses[0])


class TestResiduals:
    def test_zero_at_ground_truth(self):
        track, poses, _ = _track(seed=7)
        for i in range(2, len(track)):
            assert np.linalg.norm(residual_left(track, i, poses).e) < 1e-12
        for i in (0, 2, 3):
            assert np.linalg.norm(residual_right(track, i, poses).e) < 1e-12

    def test_prediction_matches_reprojected_point(self):
        track, poses, _ = _track(seed=8, noise=2.0)
        l, r = track.ray(0), track.ray(1)
        s = scale_left(l, r, poses[l.pose_id], poses[r.pose_id]).s
        X = reconstruct_from_base(l, poses[l.pose_id], s)
        for i in range(2, len(track)):
            block = residual_left(track, i, poses)
            ray = track.ray(i)
            direction = poses[ray.pose_id].transform(X) - ray.v
            assert_allclose(block.Y / np.linalg.norm(block.Y), direction / np.linalg.norm(direction), atol=1e-10)

    def test_right_residual_is_left_with_swapped_base(self):
        track, poses, _ = _track(seed=9, noise=1.0)
        right = residual_right(track, 3, poses).e
        track.base = BasePair(1, 0)
        assert_allclose(residual_left(track, 3, poses).e, right, atol=1e-15)

    def test_primary_target_rejected(self):
        track, poses, _ = _track()
        with pytest.raises(ValueError):
            residual_left(track, 0, poses)

    def test_missing_base_rejected(self):
        track, poses, _ = _track()
        track.base = None
        with pytest.raises(ValueError):
            residual_left(track, 2, poses)

    def test_pose_ids(self):
        track, poses, _ = _track()
        assert residual_left(track, 3, poses).pose_ids == (3, 0, 1)


class TestJacobians:
    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("right", [False, True])
    def test_blocks_match_finite_differences(self, seed, right):
        track, poses, _ = _track(seed=seed, noise=1.5)
        primary = track.base.r if right else track.base.l
        for i in range(len(track)):
            if i == primary:
                continue
            block = residual_jacobians(track, i, poses, right=right)
            for pose_id, analytic in block.blocks.items():
                numeric = _finite_difference(track, i, poses, pose_id, right)
                assert_allclose(analytic, numeric, atol=1e-5)

    def test_untouched_pose_has_no_block(self):
        track, poses, _ = _track(seed=1, noise=1.0)
        block = residual_jacobians(track, 2, poses)
        assert set(block.blocks) == {0, 1, 2}
        assert_allclose(_finite_difference(track, 2, poses, 3, False), 0.0, atol=1e-12)

    def test_distinct_poses_fill_named_blocks(self):
        track, poses, _ = _track(seed=2, noise=1.0)
        block = residual_jacobians(track, 3, poses)
        assert_allclose(block.jac_i, block.blocks[3])
        assert_allclose(block.jac_l, block.blocks[0])
        assert_allclose(block.jac_r, block.blocks[1])

    def test_target_translation_scales_by_theta(self):
        track, poses, _ = _track(seed=3, noise=1.0)
        l, r = track.ray(0), track.ray(1)
        theta = scale_left(l, r, poses[l.pose_id], poses[r.pose_id]).theta
        # observation 3 is the only one on pose 3
        Y = residual_left(track, 3, poses).Y
        for axis in np.eye(3):
            moved = list(poses)
            moved[3] = Pose(poses[3].rotation, poses[3].translation + axis)
            assert_allclose(residual_left(track, 3, moved).Y - Y, theta * axis, atol=1e-12)
        block = residual_jacobians(track, 3, poses)
        y_norm = np.linalg.norm(block.Y)
        y_hat = block.Y / y_norm
        de_dY = (np.eye(3) - np.outer(y_hat, y_hat)) / y_norm
        assert_allclose(block.jac_i[:, 3:], theta * de_dY, rtol=1e-12, atol=1e-15)


    def test_gauge_invariance(self):
        """A common change of world frame leaves the residual unchanged."""
        track, poses, _ = _track(seed=6, noise=1.0)
        block = residual_jacobians(track, 3, poses)
        # a common world-frame translation delta_w enters pose k as dt_k = R_k delta_w
        delta_w = np.array([0.3, -0.1, 0.2])
        predicted = sum(jac[:, 3:] @ (poses[k].rotation @ delta_w) for k, jac in block.blocks.items())
        assert_allclose(predicted, 0.0, atol=1e-10)
        # a common world rotation enters every pose as the same right perturbation
        rotation_sum = sum(jac[:, :3] for jac in block.blocks.values())
        assert_allclose(rotation_sum, 0.0, atol=1e-10)


@pytest.mark.slow
class TestJacobianStudy:
    def test_thousand_configurations(self):
        checked = 0
        for seed in range(1000):
            track, poses, _ = _track(seed=seed, noise=1.0)
            l, r = track.ray(0), track.ray(1)
            if scale_left(l, r, poses[l.pose_id], poses[r.pose_id]).theta < 1e-3:
                continue
            right = bool(seed % 2)
            i = 2 + seed % 4
            block = residual_jacobians(track, i, poses, right=right)
            for pose_id, analytic in block.blocks.items():
                assert_allclose(analytic, _finite_difference(track, i, poses, pose_id, right), atol=1e-5)
            checked += 1
        assert checked > 500

    def test_equal_depth_ten_thousand_tracks(self):
        for seed in range(10000):
            track, poses, _ = _track(seed=seed)
            l = track.ray(0)
            depths = [
                scale_left(l, track.ray(j), poses[l.pose_id], poses[track.ray(j).pose_id]).s
                for j in range(1, len(track))
            ]
            assert_allclose(depths, depths[0], rtol=1e-10)

    def test_prediction_matches_reprojection_ten_thousand_samples(self):
        for seed in range(10000):
            track, poses, _ = _track(seed=seed, noise=1.0)
            i = 2 + seed % 4
            l, r = track.ray(0), track.ray(1)
            X = reconstruct_from_base(l, poses[l.pose_id], scale_left(l, r, poses[l.pose_id], poses[r.pose_id]).s)
            ray = track.ray(i)
            direction = poses[ray.pose_id].transform(X) - ray.v
            Y = residual_left(track, i, poses).Y
            assert_allclose(Y / np.linalg.norm(Y), direction / np.linalg.norm(direction), atol=1e-10)
            clean, _, _ = _track(seed=seed)
            assert np.linalg.norm(residual_left(clean, i, poses).e) < 1e-12
