"""Rigid-body math on SO(3) with right-perturbation updates."""

import numpy as np
from scipy.spatial.transform import Rotation

from mcpa.models import Perturbation, Pose

SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Return [v]x so that skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """[v]x for every row of an (N, 3) array."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def exp_so3(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < SMALL_ANGLE:
        # second-order series
        k = skew(phi)
        return np.eye(3) + k + 0.5 * (k @ k)
    return Rotation.from_rotvec(phi).as_matrix()


def exp_so3_batch(phi: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(phi, dtype=float).reshape(-1, 3)).as_matrix()


def log_so3(rotation: np.ndarray) -> np.ndarray:
    cos_angle = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    if np.arccos(cos_angle) < SMALL_ANGLE:
        return 0.5 * np.array([
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ])
    return Rotation.from_matrix(rotation).as_rotvec()


def apply_right_perturbation(pose: Pose, delta: Perturbation) -> Pose:
    rotation = pose.rotation
    if np.any(delta.phi):
        rotation = rotation @ exp_so3(delta.phi)
    translation = pose.translation
    if np.any(delta.dt):
        translation = translation + delta.dt
    return Pose(rotation, translation)


def nearest_rotation(matrix: np.ndarray) -> np.ndarray:
    """Project a 3x3 (or stack of 3x3) matrix onto SO(3)."""
    u, _, vt = np.linalg.svd(matrix)
    det = np.linalg.det(u @ vt)
    fix = np.ones(np.shape(matrix)[:-2] + (3,))
    fix[..., 2] = np.sign(det) + (det == 0)
    return (u * fix[..., None, :]) @ vt


def rotation_angle(rotation: np.ndarray) -> np.ndarray:
    """Geodesic angle of a rotation (or a stack of them), in radians."""
    trace = np.trace(rotation, axis1=-2, axis2=-1)
    return np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([
        [c, 0.0, s],
        [0.0, 1.0, 0.0],
        [-s, 0.0, c],
    ])


def stack_poses(poses: list[Pose]) -> tuple[np.ndarray, np.ndarray]:
    rotations = np.array([p.rotation for p in poses], dtype=float).reshape(-1, 3, 3)
    translations = np.array([p.translation for p in poses], dtype=float).reshape(-1, 3)
    return rotations, translations


def unstack_poses(rotations: np.ndarray, translations: np.ndarray) -> list[Pose]:
    return [Pose(rotations[k].copy(), translations[k].copy()) for k in range(len(rotations))]
