"""Base-observation selection.

The left base is the observation with the smallest average direction
variance. The right base is the partner whose two-ray triangulation has the
roundest uncertainty ellipsoid, with the point covariance propagated from
the ray covariances through a Gauss-Helmert model.
"""

import logging
from enum import Enum

import numpy as np

from mcpa.exceptions import DegenerateParallax, IllConditioned, NoValidPair, ZeroCovariance
from mcpa.geometry import skew
from mcpa.models import BasePair, ObservationRay, PairUncertainty, Pose, Track
from mcpa.pose_only import scale_left

logger = logging.getLogger(__name__)

SINGULAR_GAP = 1e-10
MIN_HOMOGENEOUS = 1e-12
ZERO_TRACE = 1e-30


class BaseStrategy(str, Enum):
    ROUNDNESS = "roundness"
    MAX_THETA = "max-theta"
    MAX_DISPARITY = "max-disparity"
    RANDOM = "random"
    FIRST = "first"


def average_variance(sigma_f: np.ndarray) -> float:
    return float(np.trace(sigma_f) / 3.0)


def _kept_rows(f: np.ndarray) -> list[int]:
    """Two rows of [f]x that stay independent: drop the one at the largest |f_k|."""
    k = int(np.argmax(np.abs(f)))
    return [j for j in range(3) if j != k]


def pair_point_and_covariance(
    obs_i: ObservationRay,
    obs_j: ObservationRay,
    pose_i: Pose,
    pose_j: Pose,
    sigma_i: np.ndarray | None = None,
    sigma_j: np.ndarray | None = None,
) -> PairUncertainty:
    """Two-ray point and its covariance. ``sigma_*`` override the rays' sigma_f."""
    sigma_i = obs_i.sigma_f if sigma_i is None else sigma_i
    sigma_j = obs_j.sigma_f if sigma_j is None else sigma_j

    projections, rows = [], []
    for obs, pose in ((obs_i, pose_i), (obs_j, pose_j)):
        # P @ [X, 1] = R X + t - v, the vertex-to-point vector in the body frame
        projections.append(np.column_stack([pose.rotation, pose.translation - obs.v]))
        rows.append(_kept_rows(obs.f))
    E = np.vstack([
        skew(obs.f)[r] @ P for obs, P, r in zip((obs_i, obs_j), projections, rows)
    ])

    _, singular, vt = np.linalg.svd(E)
    if singular[-2] - singular[-1] < SINGULAR_GAP:
        raise IllConditioned("two-ray system has an ambiguous null direction")
    x_h = vt[-1]
    if abs(x_h[3]) < MIN_HOMOGENEOUS:
        raise IllConditioned("two-ray point is at infinity")
    if x_h[3] < 0:
        x_h = -x_h
    X_hat = x_h[:3] / x_h[3]

    sigma = np.zeros((6, 6))
    sigma[:3, :3] = sigma_i
    sigma[3:, 3:] = sigma_j
    if np.trace(sigma) < ZERO_TRACE:
        return PairUncertainty(X_hat=X_hat, cov_X=np.zeros((3, 3)), roundness=1.0)

    # d (K(f) P x) / d f = -[P x]x restricted to the same rows
    F = np.zeros((4, 6))
    for k, (P, r) in enumerate(zip(projections, rows)):
        F[2 * k:2 * k + 2, 3 * k:3 * k + 3] = -skew(P @ x_h)[r]
    M = F @ sigma @ F.T
    N = E.T @ np.linalg.pinv(M, hermitian=True) @ E

    # constrained inverse under |x| = 1, via the bordered normal matrix
    bordered = np.zeros((5, 5))
    bordered[:4, :4] = N
    bordered[:4, 4] = x_h
    bordered[4, :4] = x_h
    try:
        cov_h = np.linalg.inv(bordered)[:4, :4]
    except np.linalg.LinAlgError as exc:
        raise IllConditioned("Gauss-Helmert normal matrix is singular") from exc

    J = np.column_stack([np.eye(3), -X_hat]) / x_h[3]
    cov_X = J @ cov_h @ J.T
    cov_X = 0.5 * (cov_X + cov_X.T)
    try:
        score = roundness(cov_X)
    except ZeroCovariance:
        score = 1.0
    return PairUncertainty(X_hat=X_hat, cov_X=cov_X, roundness=score)


def roundness(cov_X: np.ndarray) -> float:
    if np.trace(cov_X) < ZERO_TRACE:
        raise ZeroCovariance("covariance trace is zero")
    eigenvalues = np.clip(np.linalg.eigvalsh(cov_X), 0.0, None)
    return float(np.sqrt(eigenvalues[0] / eigenvalues[-1]))


def _theta(track: Track, a: int, b: int, poses: list[Pose]) -> float:
    ray_a, ray_b = track.ray(a), track.ray(b)
    try:
        return scale_left(ray_a, ray_b, poses[ray_a.pose_id], poses[ray_b.pose_id]).theta
    except DegenerateParallax:
        return 0.0


def _world_direction(track: Track, k: int, poses: list[Pose]) -> np.ndarray:
    ray = track.ray(k)
    return poses[ray.pose_id].rotation.T @ ray.f


def _select_by_roundness(track: Track, poses: list[Pose]) -> BasePair:
    obs = track.observations
    traces = np.trace(obs.sigma_f, axis1=1, axis2=2)
    have_covariance = traces.max() >= ZERO_TRACE
    left = int(np.argmin(traces)) if have_covariance else 0
    if len(track) == 2:
        return BasePair(left, 1 - left)

    sigma_override = None if have_covariance else np.eye(3)
    ray_l = track.ray(left)
    best, best_score = None, -1.0
    for i in range(len(track)):
        if i == left:
            continue
        if _theta(track, left, i, poses) == 0.0:
            continue
        ray_i = track.ray(i)
        try:
            score = pair_point_and_covariance(
                ray_l, ray_i, poses[ray_l.pose_id], poses[ray_i.pose_id],
                sigma_i=sigma_override, sigma_j=sigma_override,
            ).roundness
        except IllConditioned:
            continue
        if score > best_score:
            best, best_score = i, score
    if best is None:
        raise NoValidPair(f"track {track.track_id}: every pair is degenerate")
    return BasePair(left, best)


def _select_by_pair_score(track: Track, poses: list[Pose], score) -> BasePair:
    best, best_score = None, 0.0
    n = len(track)
    for a in range(n):
        for b in range(a + 1, n):
            value = score(a, b)
            if value > best_score:
                best, best_score = (a, b), value
    if best is None:
        raise NoValidPair(f"track {track.track_id}: every pair is degenerate")
    return BasePair(*best)


def select_bases(
    track: Track,
    poses: list[Pose],
    strategy: BaseStrategy = BaseStrategy.ROUNDNESS,
    rng: np.random.Generator | None = None,
) -> BasePair:
    if len(track) < 2:
        raise NoValidPair(f"track {track.track_id} has fewer than two observations")
    strategy = BaseStrategy(strategy)

    if strategy is BaseStrategy.ROUNDNESS:
        return _select_by_roundness(track, poses)
    if strategy is BaseStrategy.MAX_THETA:
        return _select_by_pair_score(track, poses, lambda a, b: _theta(track, a, b, poses))
    if strategy is BaseStrategy.MAX_DISPARITY:
        directions = [_world_direction(track, k, poses) for k in range(len(track))]

        def disparity(a, b):
            if _theta(track, a, b, poses) == 0.0:
                return 0.0
            return float(np.arccos(np.clip(directions[a] @ directions[b], -1.0, 1.0)))

        return _select_by_pair_score(track, poses, disparity)
    if strategy is BaseStrategy.RANDOM:
        rng = rng if rng is not None else np.random.default_rng(0)
        l, r = rng.choice(len(track), size=2, replace=False)
        return BasePair(int(l), int(r))
    return BasePair(0, 1)


def assign_bases(
    tracks: list[Track],
    poses: list[Pose],
    strategy: BaseStrategy = BaseStrategy.ROUNDNESS,
    seed: int = 0,
    reselect: bool = False,
) -> tuple[list[Track], int]:
    """Fill in base pairs; returns the usable tracks and the number dropped.

    Tracks that already carry a base keep it unless ``reselect`` is set.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    kept, dropped = [], 0
    for track in tracks:
        if track.base is not None and not reselect:
            kept.append(track)
            continue
        try:
            track.base = select_bases(track, poses, strategy, rng)
        except NoValidPair as exc:
            logger.debug("Dropping track: %s", exc)
            dropped += 1
            continue
        kept.append(track)
    if dropped:
        logger.warning("Dropped %d of %d tracks with no usable base pair", dropped, len(tracks))
    logger.info("Selected bases for %d tracks (strategy=%s)", len(kept), BaseStrategy(strategy).value)
    return kept, dropped
