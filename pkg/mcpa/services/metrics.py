"""Accuracy metrics for estimated poses and points."""

import logging

import numpy as np

from mcpa.gcm import MIN_DEPTH
from mcpa.geometry import rotation_angle, stack_poses
from mcpa.models import Metrics, Pose, Problem

logger = logging.getLogger(__name__)

MIN_GT_TRANSLATION = 1e-12


def align_to_anchor(
    est_poses: list[Pose],
    gt_poses: list[Pose],
    est_points: np.ndarray | None = None,
) -> tuple[list[Pose], np.ndarray | None]:
    """Express the estimate in the ground-truth world frame so that pose 0 coincides."""
    R0, t0 = est_poses[0].rotation, est_poses[0].translation
    R_G = R0.T @ gt_poses[0].rotation
    t_G = R0.T @ (gt_poses[0].translation - t0)
    aligned = [Pose(p.rotation @ R_G, p.rotation @ t_G + p.translation) for p in est_poses]
    points = None
    if est_points is not None:
        points = (np.asarray(est_points, dtype=float) - t_G) @ R_G
    return aligned, points


def rotation_errors(est_poses: list[Pose], gt_poses: list[Pose]) -> np.ndarray:
    R_est, _ = stack_poses(est_poses)
    R_gt, _ = stack_poses(gt_poses)
    return rotation_angle(R_gt @ np.swapaxes(R_est, 1, 2))


def translation_errors(est_poses: list[Pose], gt_poses: list[Pose]) -> tuple[np.ndarray, np.ndarray]:
    """Absolute translation errors and the gt translation norms."""
    _, t_est = stack_poses(est_poses)
    _, t_gt = stack_poses(gt_poses)
    return np.linalg.norm(t_gt - t_est, axis=1), np.linalg.norm(t_gt, axis=1)


def reprojection_error(problem: Problem, poses: list[Pose], points: np.ndarray) -> float:
    """Mean pixel distance between observed and reprojected pixels, over points in front of the camera."""
    if not problem.tracks:
        return float("nan")
    pose_id = np.concatenate([t.observations.pose_id for t in problem.tracks])
    camera_id = np.concatenate([t.observations.camera_id for t in problem.tracks])
    observed = np.concatenate([t.observations.pixel for t in problem.tracks])
    X = np.asarray(points, dtype=float)[np.concatenate([np.full(len(t), k) for k, t in enumerate(problem.tracks)])]

    rotations, translations = stack_poses(poses)
    body = np.einsum("nij,nj->ni", rotations[pose_id], X) + translations[pose_id]
    cameras = problem.rig.cameras
    cam_rotation = np.array([c.extrinsics.rotation for c in cameras])[camera_id]
    cam_translation = np.array([c.extrinsics.translation for c in cameras])[camera_id]
    focal = np.array([[c.intrinsics.fx, c.intrinsics.fy] for c in cameras])[camera_id]
    center = np.array([[c.intrinsics.cx, c.intrinsics.cy] for c in cameras])[camera_id]
    xc = np.einsum("nji,nj->ni", cam_rotation, body - cam_translation)

    usable = np.all(np.isfinite(xc), axis=1) & (xc[:, 2] > MIN_DEPTH)
    if not np.any(usable):
        return float("nan")
    predicted = focal[usable] * xc[usable, :2] / xc[usable, 2:3] + center[usable]
    return float(np.mean(np.linalg.norm(predicted - observed[usable], axis=1)))


def error_metrics(
    est_poses: list[Pose],
    gt_poses: list[Pose],
    est_points: np.ndarray | None = None,
    gt_points: np.ndarray | None = None,
    problem: Problem | None = None,
) -> Metrics:
    """Mean errors of gauge-aligned estimates. Point metrics are NaN when not computable."""
    if len(est_poses) != len(gt_poses):
        raise ValueError("estimated and ground-truth pose lists differ in length")

    rot = rotation_errors(est_poses, gt_poses)
    abs_err, gt_norm = translation_errors(est_poses, gt_poses)
    defined = gt_norm >= MIN_GT_TRANSLATION
    excluded = int((~defined).sum())
    if excluded:
        logger.debug("%d poses excluded from relative translation error", excluded)
    relative = float(np.mean(abs_err[defined] / gt_norm[defined])) if np.any(defined) else 0.0

    reconstruction = float("nan")
    reprojection = float("nan")
    if est_points is not None:
        est_points = np.asarray(est_points, dtype=float)
        if gt_points is not None:
            diff = np.linalg.norm(est_points - np.asarray(gt_points, dtype=float), axis=1)
            diff = diff[np.isfinite(diff)]
            if len(diff):
                reconstruction = float(np.mean(diff))
        if problem is not None:
            reprojection = reprojection_error(problem, est_poses, est_points)

    return Metrics(
        rotation=float(np.mean(rot)),
        translation=relative,
        translation_abs=float(np.mean(abs_err)),
        reprojection=reprojection,
        reconstruction=reconstruction,
        excluded_translation=excluded,
    )
