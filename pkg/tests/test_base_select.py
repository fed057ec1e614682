"""Tests for base-observation selection and two-ray uncertainty."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mcpa.base_select import (
    BaseStrategy,
    assign_bases,
    average_variance,
    pair_point_and_covariance,
    roundness,
    select_bases,
)
from mcpa.exceptions import IllConditioned, NoValidPair, ZeroCovariance
from mcpa.gcm import pixels_to_rays, project
from mcpa.models import BasePair, Pose, SynthSpec, Track
from mcpa.pose_only import scale_left
from mcpa.services.synth import generate_problem
from mcpa.triangulate import triangulate_midpoint

from tests.conftest import _make_poses, _make_rig, _make_track

POINT = np.array([0.5, 0.0, 10.0])


def _stereo(baseline: float = 1.0, sigma: float = 1.0):
    """One camera at two poses, ``baseline`` apart along x, both looking at POINT."""
    rig = _make_rig(1)
    poses = [Pose.identity(), Pose(np.eye(3), np.array([-baseline, 0.0, 0.0]))]
    track = _make_track(POINT, poses, rig, [(0, 0), (1, 0)], sigma=sigma)
    return track, poses, rig


def _pair(track, poses, i=0, j=1, **kwargs):
    a, b = track.ray(i), track.ray(j)
    return pair_point_and_covariance(a, b, poses[a.pose_id], poses[b.pose_id], **kwargs)


class TestScalars:
    def test_average_variance(self):
        assert average_variance(np.diag([1.0, 2.0, 3.0])) == pytest.approx(2.0)

    def test_roundness_sphere(self):
        assert roundness(np.eye(3)) == pytest.approx(1.0)

    def test_roundness_elongated(self):
        assert roundness(np.diag([1.0, 1.0, 4.0])) == pytest.approx(0.5)

    def test_roundness_degenerate(self):
        assert roundness(np.diag([0.0, 1.0, 1.0])) == 0.0

    def test_roundness_zero(self):
        with pytest.raises(ZeroCovariance):
            roundness(np.zeros((3, 3)))


class TestPairUncertainty:
    def test_noise_free_point(self):
        track, poses, _ = _stereo()
        assert_allclose(_pair(track, poses).X_hat, POINT, atol=1e-8)

    def test_zero_covariance(self):
        track, poses, _ = _stereo(sigma=0.0)
        result = _pair(track, poses)
        assert_allclose(result.cov_X, 0.0)
        assert result.roundness == 1.0

    def test_covariance_is_symmetric_psd(self):
        track, poses, _ = _stereo()
        cov = _pair(track, poses).cov_X
        assert_allclose(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_depth_is_least_certain(self):
        track, poses, _ = _stereo()
        _, vectors = np.linalg.eigh(_pair(track, poses).cov_X)
        assert abs(vectors[2, -1]) > 0.9

    def test_covariance_scales_with_pixel_variance(self):
        track1, poses, _ = _stereo(sigma=1.0)
        track2, _, _ = _stereo(sigma=2.0)
        assert_allclose(_pair(track2, poses).cov_X, 4.0 * _pair(track1, poses).cov_X, rtol=1e-6)

    def test_wider_baseline_is_rounder(self):
        narrow, poses_n, _ = _stereo(baseline=0.2)
        wide, poses_w, _ = _stereo(baseline=2.0)
        assert _pair(wide, poses_w).roundness > _pair(narrow, poses_n).roundness

    def test_parallel_rays(self):
        track, poses, _ = _stereo()
        with pytest.raises(IllConditioned):
            _pair(track, poses, 0, 0)

    def test_override_covariances(self):
        track, poses, _ = _stereo(sigma=0.0)
        result = _pair(track, poses, sigma_i=np.eye(3), sigma_j=np.eye(3))
        assert np.trace(result.cov_X) > 0


def _multi_track(seed=0, sigmas=(3.0, 1.0, 2.0, 4.0, 2.5)):
    rig = _make_rig(2)
    poses = _make_poses(5, seed=seed, angle=0.02, shift=1.0)
    slots = [(k, k % 2) for k in range(len(sigmas))]
    track = _make_track(np.array([0.3, 0.2, 12.0]), poses, rig, slots)
    track.observations.sigma_f = track.observations.sigma_f * (np.array(sigmas) ** 2)[:, None, None]
    return track, poses


def _degenerate_track(n=3):
    rig = _make_rig(1)
    pixels = np.tile([300.0, 200.0], (n, 1))
    obs = pixels_to_rays(rig, np.zeros(n, dtype=int), np.zeros(n, dtype=int), pixels, np.tile(np.eye(2), (n, 1, 1)))
    return Track(track_id=9, observations=obs)


class TestSelectBases:
    def test_left_has_smallest_variance(self):
        track, poses = _multi_track()
        pair = select_bases(track, poses)
        assert pair.l == 1
        assert pair.r != 1

    def test_right_maximizes_roundness(self):
        track, poses = _multi_track(seed=3)
        pair = select_bases(track, poses)
        scores = {j: _pair(track, poses, pair.l, j).roundness for j in range(len(track)) if j != pair.l}
        assert pair.r == max(scores, key=scores.get)

    def test_two_observations(self):
        track, poses = _multi_track(sigmas=(2.0, 1.0))
        assert select_bases(track, poses) == BasePair(1, 0)

    def test_without_covariances_left_is_first(self):
        track, poses = _multi_track(sigmas=(0.0, 0.0, 0.0, 0.0))
        assert select_bases(track, poses).l == 0

    def test_max_theta(self):
        track, poses = _multi_track()
        pair = select_bases(track, poses, BaseStrategy.MAX_THETA)

        def theta(a, b):
            ra, rb = track.ray(a), track.ray(b)
            return scale_left(ra, rb, poses[ra.pose_id], poses[rb.pose_id]).theta

        best = max(((a, b) for a in range(5) for b in range(a + 1, 5)), key=lambda ab: theta(*ab))
        assert (pair.l, pair.r) == best

    def test_max_disparity_is_valid_pair(self):
        track, poses = _multi_track()
        pair = select_bases(track, poses, BaseStrategy.MAX_DISPARITY)
        assert pair.l < pair.r

    def test_first(self):
        track, poses = _multi_track()
        assert select_bases(track, poses, "first") == BasePair(0, 1)

    def test_random_is_reproducible(self):
        track, poses = _multi_track()
        a = select_bases(track, poses, BaseStrategy.RANDOM, np.random.Generator(np.random.Philox(5)))
        b = select_bases(track, poses, BaseStrategy.RANDOM, np.random.Generator(np.random.Philox(5)))
        assert a == b
        assert a.l != a.r

    def test_no_valid_pair(self):
        with pytest.raises(NoValidPair):
            select_bases(_degenerate_track(), [Pose.identity()])

    def test_single_observation(self):
        with pytest.raises(NoValidPair):
            select_bases(_degenerate_track(1), [Pose.identity()])


class TestAssignBases:
    def test_drops_degenerate_tracks(self):
        track, poses = _multi_track()
        kept, dropped = assign_bases([track, _degenerate_track()], poses)
        assert kept == [track]
        assert dropped == 1
        assert track.base is not None

    def test_keeps_stored_base(self):
        track, poses = _multi_track()
        track.base = BasePair(3, 4)
        assign_bases([track], poses)
        assert track.base == BasePair(3, 4)

    def test_reselect(self):
        track, poses = _multi_track()
        track.base = BasePair(3, 4)
        assign_bases([track], poses, BaseStrategy.FIRST, reselect=True)
        assert track.base == BasePair(0, 1)


@pytest.mark.slow
class TestUncertaintyStudy:
    def test_monte_carlo_covariance(self):
        track, poses, rig = _stereo()
        expected = _pair(track, poses).cov_X
        rng = np.random.default_rng(11)
        clean = np.array([project(rig, 0, pose, POINT).pixel for pose in poses])
        samples = []
        for _ in range(100_000):
            pixels = clean + rng.standard_normal((2, 2))
            obs = pixels_to_rays(rig, np.array([0, 1]), np.array([0, 0]), pixels, np.tile(np.eye(2), (2, 1, 1)))
            noisy = Track(track_id=0, observations=obs)
            samples.append(_pair(noisy, poses, sigma_i=np.zeros((3, 3)), sigma_j=np.zeros((3, 3))).X_hat)
        empirical = np.cov(np.array(samples).T)
        assert_allclose(np.linalg.eigvalsh(empirical), np.linalg.eigvalsh(expected), rtol=0.2)

    @pytest.mark.parametrize("sigma", [4.0, 8.0])
    def test_roundness_selection_accuracy(self, sigma):
        errors = {s: [] for s in BaseStrategy}
        multi = []
        for trial in range(200):
            spec = SynthSpec(n_poses=10, n_points=200, sigma_max=sigma, seed=trial)
            data = generate_problem(spec)
            poses = data.gt_poses
            for track, point in zip(data.problem.tracks, data.gt_points):
                rng = np.random.Generator(np.random.Philox(trial))
                rays = [(track.ray(k), poses[track.ray(k).pose_id]) for k in range(len(track))]
                try:
                    multi.append(np.linalg.norm(triangulate_midpoint(rays) - point))
                except IllConditioned:
                    pass
                for strategy in BaseStrategy:
                    try:
                        pair = select_bases(track, poses, strategy, rng)
                        estimate = triangulate_midpoint([rays[pair.l], rays[pair.r]])
                    except (NoValidPair, IllConditioned):
                        continue
                    errors[strategy].append(np.linalg.norm(estimate - point))
        median = {s: np.median(v) for s, v in errors.items()}
        best = median[BaseStrategy.ROUNDNESS]
        assert best <= median[BaseStrategy.MAX_THETA]
        assert best <= median[BaseStrategy.MAX_DISPARITY]
        assert best <= median[BaseStrategy.RANDOM]
        assert best <= median[BaseStrategy.FIRST]
        assert best <= np.median(multi)
