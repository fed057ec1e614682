"""Multi-ray triangulation for the generalized camera.

Both solvers are closed forms. The midpoint solver minimizes the summed
squared distances of the point to the rays. The statistically optimal solver
weights each ray's tangent-plane residual by its inverse direction covariance.
"""

import logging
from enum import Enum

import numpy as np

from mcpa.exceptions import IllConditioned
from mcpa.models import ObservationRay, Pose, Reconstruction, Track

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
MIN_WEIGHT_DET = 1e-30


class TriangulationMethod(str, Enum):
    SOT = "sot"
    MIDPOINT = "midpoint"


def null_space(f: np.ndarray) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane orthogonal to unit vector ``f``."""
    return null_space_batch(np.asarray(f, dtype=float)[None, :])[0]


def null_space_batch(f: np.ndarray) -> np.ndarray:
    # Householder reflection mapping f onto -sign(f_k) e_k; its other columns span f's tangent plane
    n = len(f)
    k = np.argmax(np.abs(f), axis=1)
    rows = np.arange(n)
    sign = np.where(f[rows, k] >= 0.0, 1.0, -1.0)
    u = f.copy()
    u[rows, k] += sign
    householder = np.eye(3)[None] - 2.0 * u[:, :, None] * u[:, None, :] / np.einsum("ni,ni->n", u, u)[:, None, None]
    keep = np.array([[j for j in range(3) if j != kk] for kk in range(3)])[k]
    return np.take_along_axis(householder, np.broadcast_to(keep[:, None, :], (n, 3, 2)), axis=2)


def _tangent_weights(f: np.ndarray, sigma_f: np.ndarray, basis: np.ndarray) -> tuple[np.ndarray, int]:
    sigma_e = np.swapaxes(basis, 1, 2) @ sigma_f @ basis
    det = np.linalg.det(sigma_e)
    singular = det < MIN_WEIGHT_DET
    weights = np.broadcast_to(np.eye(2), sigma_e.shape).copy()
    if np.any(~singular):
        weights[~singular] = np.linalg.inv(sigma_e[~singular])
    return weights, int(singular.sum())


def _normal_systems(
    f: np.ndarray,
    v: np.ndarray,
    sigma_f: np.ndarray | None,
    rotations: np.ndarray,
    translations: np.ndarray,
    groups: np.ndarray,
    n_groups: int,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Accumulate per-group 3x3 systems A X = b. ``sigma_f`` None selects midpoint weighting."""
    basis = null_space_batch(f)
    if sigma_f is None:
        weights, singular = np.broadcast_to(np.eye(2), (len(f), 2, 2)), 0
    else:
        weights, singular = _tangent_weights(f, sigma_f, basis)
    a_i = np.swapaxes(basis, 1, 2) @ rotations
    b_i = np.einsum("nji,nj->ni", basis, translations - v)
    a_t_w = np.swapaxes(a_i, 1, 2) @ weights
    A = np.zeros((n_groups, 3, 3))
    B = np.zeros((n_groups, 3))
    np.add.at(A, groups, a_t_w @ a_i)
    np.add.at(B, groups, np.einsum("nij,nj->ni", a_t_w, b_i))
    return A, -B, singular


def _solve_single(rays: list[tuple[ObservationRay, Pose]], weighted: bool) -> np.ndarray:
    if len(rays) < 2:
        raise IllConditioned("triangulation needs at least two rays")
    f = np.array([ray.f for ray, _ in rays], dtype=float)
    v = np.array([ray.v for ray, _ in rays], dtype=float)
    sigma_f = np.array([ray.sigma_f for ray, _ in rays], dtype=float) if weighted else None
    rotations = np.array([pose.rotation for _, pose in rays], dtype=float)
    translations = np.array([pose.translation for _, pose in rays], dtype=float)
    A, b, singular = _normal_systems(f, v, sigma_f, rotations, translations, np.zeros(len(rays), dtype=int), 1)
    if singular:
        logger.debug("%d rays fell back to identity weight", singular)
    if np.linalg.cond(A[0]) > MAX_CONDITION:
        raise IllConditioned("triangulation system is ill-conditioned")
    return np.linalg.solve(A[0], b[0])


def triangulate_midpoint(rays: list[tuple[ObservationRay, Pose]]) -> np.ndarray:
    return _solve_single(rays, weighted=False)


def triangulate_sot(rays: list[tuple[ObservationRay, Pose]]) -> np.ndarray:
    return _solve_single(rays, weighted=True)


def reconstruct_points(
    tracks: list[Track],
    poses: list[Pose],
    method: TriangulationMethod = TriangulationMethod.SOT,
) -> Reconstruction:
    """Triangulate every track at the given poses in one batched pass."""
    method = TriangulationMethod(method)
    track_ids = np.array([t.track_id for t in tracks], dtype=np.int64)
    points = np.full((len(tracks), 3), np.nan)
    if not tracks:
        return Reconstruction(track_ids=track_ids, points=points, valid=np.zeros(0, dtype=bool))

    groups = np.concatenate([np.full(len(t), k) for k, t in enumerate(tracks)])
    pose_id = np.concatenate([t.observations.pose_id for t in tracks])
    f = np.concatenate([t.observations.f for t in tracks])
    v = np.concatenate([t.observations.v for t in tracks])
    sigma_f = np.concatenate([t.observations.sigma_f for t in tracks]) if method is TriangulationMethod.SOT else None
    rotations = np.array([p.rotation for p in poses], dtype=float)[pose_id]
    translations = np.array([p.translation for p in poses], dtype=float)[pose_id]

    A, b, singular = _normal_systems(f, v, sigma_f, rotations, translations, groups, len(tracks))
    counts = np.bincount(groups, minlength=len(tracks))
    valid = (counts >= 2) & (np.linalg.cond(A) <= MAX_CONDITION)
    if np.any(valid):
        points[valid] = np.linalg.solve(A[valid], b[valid][:, :, None])[:, :, 0]
    if singular:
        logger.warning("%d observations used identity weight (singular direction covariance)", singular)
    failed = int((~valid).sum())
    if failed:
        logger.warning("%d of %d tracks could not be triangulated", failed, len(tracks))
    return Reconstruction(track_ids=track_ids, points=points, valid=valid, singular_weights=singular)
