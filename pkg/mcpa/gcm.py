"""Generalized camera model for a calibrated pinhole rig.

Every pixel of camera c at rig pose (R, t) becomes a body-frame ray (f, v)
with f = R_c * normalize(K^-1 [u, v, 1]) and v = t_c, so that a world point X
on the ray satisfies s * f + v = R @ X + t.
"""

import logging

import numpy as np

from mcpa.exceptions import BehindCamera
from mcpa.models import ObservationRay, Observations, Pose, Projection, RigConfig

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-9


def _camera_frame(rig: RigConfig, cam: int, pose: Pose, points: np.ndarray) -> np.ndarray:
    extrinsics = rig.camera(cam).extrinsics
    body = points @ pose.rotation.T + pose.translation
    return (body - extrinsics.translation) @ extrinsics.rotation


def project(rig: RigConfig, cam: int, pose: Pose, X_world: np.ndarray) -> Projection:
    intrinsics = rig.camera(cam).intrinsics
    xc = _camera_frame(rig, cam, pose, np.asarray(X_world, dtype=float)[None, :])[0]
    if xc[2] <= MIN_DEPTH:
        raise BehindCamera(f"camera-frame depth {xc[2]:.3g} m for camera {cam}")
    pixel = np.array([
        intrinsics.fx * xc[0] / xc[2] + intrinsics.cx,
        intrinsics.fy * xc[1] / xc[2] + intrinsics.cy,
    ])
    return Projection(pixel=pixel, depth=float(xc[2]), in_image=intrinsics.contains(pixel))


def project_points(
    rig: RigConfig, cam: int, pose: Pose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project (M, 3) world points. Returns pixels, depths and a visibility mask.

    Pixels of points at or behind the image plane are NaN.
    """
    intrinsics = rig.camera(cam).intrinsics
    xc = _camera_frame(rig, cam, pose, points)
    depth = xc[:, 2]
    front = depth > MIN_DEPTH
    pixels = np.full((len(points), 2), np.nan)
    z = depth[front]
    pixels[front, 0] = intrinsics.fx * xc[front, 0] / z + intrinsics.cx
    pixels[front, 1] = intrinsics.fy * xc[front, 1] / z + intrinsics.cy
    with np.errstate(invalid="ignore"):
        inside = (
            (pixels[:, 0] >= 0.0) & (pixels[:, 0] < intrinsics.width)
            & (pixels[:, 1] >= 0.0) & (pixels[:, 1] < intrinsics.height)
        )
    visible = front & inside
    logger.debug(
        "Camera %d: %d of %d points visible, %d behind the image plane",
        cam, int(visible.sum()), len(points), int((~front).sum()),
    )
    return pixels, depth, visible


def _back_project(k_inv: np.ndarray, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit camera-frame directions of (N, 2) pixels and their 3x2 Jacobians."""
    homogeneous = np.column_stack([pixels, np.ones(len(pixels))])
    d = homogeneous @ k_inv.T
    norm = np.linalg.norm(d, axis=1)
    g = d / norm[:, None]
    # d g / d d = (I - g g^T) / |d|, chained with d d / d pixel = K^-1[:, :2]
    normalization = (np.eye(3)[None] - g[:, :, None] * g[:, None, :]) / norm[:, None, None]
    return g, normalization @ k_inv[:, :2]


def _ray_covariance(jacobian: np.ndarray, rotation: np.ndarray, sigma_px: np.ndarray) -> np.ndarray:
    full = rotation @ jacobian
    cov = full @ sigma_px @ np.swapaxes(full, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def propagate_ray_covariance(rig: RigConfig, cam: int, pixel: np.ndarray, sigma_px: np.ndarray) -> np.ndarray:
    camera = rig.camera(cam)
    _, jacobian = _back_project(camera.intrinsics.K_inv, np.asarray(pixel, dtype=float)[None, :])
    return _ray_covariance(jacobian[0], camera.extrinsics.rotation, np.asarray(sigma_px, dtype=float))


def pixel_to_ray(
    rig: RigConfig,
    cam: int,
    pixel: np.ndarray,
    sigma_px: np.ndarray,
    pose_id: int = 0,
) -> ObservationRay:
    camera = rig.camera(cam)
    pixel = np.asarray(pixel, dtype=float)
    sigma_px = np.asarray(sigma_px, dtype=float)
    g, jacobian = _back_project(camera.intrinsics.K_inv, pixel[None, :])
    return ObservationRay(
        f=camera.extrinsics.rotation @ g[0],
        v=np.array(camera.extrinsics.translation, dtype=float),
        sigma_f=_ray_covariance(jacobian[0], camera.extrinsics.rotation, sigma_px),
        pose_id=pose_id,
        camera_id=cam,
        pixel=pixel,
        sigma_px=sigma_px,
    )


def pixels_to_rays(
    rig: RigConfig,
    pose_id: np.ndarray,
    camera_id: np.ndarray,
    pixels: np.ndarray,
    sigma_px: np.ndarray,
) -> Observations:
    """Vectorized pixel_to_ray over (N,) observations."""
    n = len(pixels)
    pixels = np.asarray(pixels, dtype=float).reshape(n, 2)
    sigma_px = np.asarray(sigma_px, dtype=float).reshape(n, 2, 2)
    camera_id = np.asarray(camera_id, dtype=np.int64)
    f = np.zeros((n, 3))
    v = np.zeros((n, 3))
    sigma_f = np.zeros((n, 3, 3))
    for cam in np.unique(camera_id):
        camera = rig.camera(int(cam))
        sel = camera_id == cam
        g, jacobian = _back_project(camera.intrinsics.K_inv, pixels[sel])
        f[sel] = g @ camera.extrinsics.rotation.T
        v[sel] = camera.extrinsics.translation
        sigma_f[sel] = _ray_covariance(jacobian, camera.extrinsics.rotation, sigma_px[sel])
    return Observations(
        pose_id=np.asarray(pose_id, dtype=np.int64).reshape(n),
        camera_id=camera_id,
        f=f,
        v=v,
        sigma_f=sigma_f,
        pixel=pixels,
        sigma_px=sigma_px,
    )
