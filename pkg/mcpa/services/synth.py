"""Synthetic multi-camera datasets: rig presets, trajectories, noisy observations.

Random draws come from one Philox stream seeded by ``SynthSpec.seed`` and are
consumed in a fixed order:

1. scene points, uniform in the scene cube, (n_points, 3)
2. per-observation noise level sigma ~ U(0, sigma_max), one per kept observation
3. pixel noise, standard normal, (n_observations, 2)
4. rotation perturbation axes, standard normal, (n_poses - 1, 3)
5. translation perturbations, standard normal, (n_poses - 1, 3)

Observations are ordered by point, then pose, then camera.
"""

import logging

import numpy as np

from mcpa.config import Settings, get_settings
from mcpa.exceptions import EmptyProblem
from mcpa.gcm import pixels_to_rays, project_points
from mcpa.geometry import exp_so3, rot_y
from mcpa.models import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    Mode,
    Pose,
    Problem,
    RigConfig,
    SolverSettings,
    SynthSpec,
    SyntheticProblem,
    Track,
)
from mcpa.triangulate import TriangulationMethod, reconstruct_points

logger = logging.getLogger(__name__)

FOCAL = 540.0
WIDTH, HEIGHT = 1080, 960


def _intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=FOCAL, fy=FOCAL, cx=WIDTH / 2, cy=HEIGHT / 2, width=WIDTH, height=HEIGHT)


def make_rig(preset: str, settings: Settings | None = None) -> RigConfig:
    """Four-camera rig. ``forward``: a row along body x, all looking +z.

    ``omni``: corners of a square in the body xz-plane looking +z, +x, -z, -x.
    """
    settings = settings or get_settings()
    if preset == "forward":
        spacing = settings.forward_spacing
        xs = (np.arange(4) - 1.5) * spacing
        extrinsics = [CameraExtrinsics(np.eye(3), np.array([x, 0.0, 0.0])) for x in xs]
    elif preset == "omni":
        h = settings.omni_side / 2
        corners = [(-h, h), (h, h), (h, -h), (-h, -h)]
        extrinsics = [
            CameraExtrinsics(rot_y(np.pi / 2 * k), np.array([x, 0.0, z]))
            for k, (x, z) in enumerate(corners)
        ]
    else:
        raise ValueError(f"unknown rig preset {preset!r}")
    return RigConfig(tuple(Camera(_intrinsics(), e) for e in extrinsics))


def make_trajectory(kind: str, n_poses: int, settings: Settings | None = None) -> list[Pose]:
    """``linear``: sideways steps along world x. ``curve``: arc in the xz-plane, yaw tangent to it."""
    settings = settings or get_settings()
    if n_poses < 2:
        raise ValueError("n_poses must be >= 2")
    step = settings.linear_step
    if kind == "linear":
        return [Pose(np.eye(3), np.array([-step * k, 0.0, 0.0])) for k in range(n_poses)]
    if kind == "curve":
        radius = settings.curve_radius
        poses = []
        for k in range(n_poses):
            alpha = k * step / radius
            center = np.array([radius * (1.0 - np.cos(alpha)), 0.0, radius * np.sin(alpha)])
            rotation = rot_y(alpha).T
            poses.append(Pose(rotation, -rotation @ center))
        return poses
    raise ValueError(f"unknown trajectory {kind!r}")


def _perturb(gt_poses: list[Pose], spec: SynthSpec, rng: np.random.Generator) -> list[Pose]:
    n_free = len(gt_poses) - 1
    axes = rng.standard_normal((n_free, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    offsets = rng.standard_normal((n_free, 3)) * (spec.trans_perturb / np.sqrt(3.0))
    angle = np.deg2rad(spec.rot_perturb)
    poses = [Pose(gt_poses[0].rotation.copy(), gt_poses[0].translation.copy())]
    for k, gt in enumerate(gt_poses[1:]):
        poses.append(Pose(gt.rotation @ exp_so3(angle * axes[k]), gt.translation + offsets[k]))
    return poses


def generate_problem(
    spec: SynthSpec,
    mode: Mode = Mode.MCPA,
    solver: SolverSettings | None = None,
    settings: Settings | None = None,
) -> SyntheticProblem:
    settings = settings or get_settings()
    rng = np.random.Generator(np.random.Philox(spec.seed))
    rig = make_rig(spec.rig_preset, settings)
    gt_poses = make_trajectory(spec.trajectory, spec.n_poses, settings)

    extent = settings.scene_extent
    points = rng.uniform(-extent, extent, size=(spec.n_points, 3))

    # indexed [point, pose, camera]
    pixel_grid = np.full((spec.n_points, spec.n_poses, len(rig), 2), np.nan)
    visible = np.zeros((spec.n_points, spec.n_poses, len(rig)), dtype=bool)
    for k, pose in enumerate(gt_poses):
        for c in range(len(rig)):
            pixels, _, mask = project_points(rig, c, pose, points)
            pixel_grid[:, k, c] = pixels
            visible[:, k, c] = mask

    counts = visible.reshape(spec.n_points, -1).sum(axis=1)
    kept = np.flatnonzero(counts >= 2)
    if len(kept) == 0:
        raise EmptyProblem("no scene point is seen by at least two cameras")

    point_idx, pose_idx, cam_idx = np.nonzero(visible[kept])
    point_idx = kept[point_idx]
    clean = pixel_grid[point_idx, pose_idx, cam_idx]
    n_obs = len(point_idx)

    sigma = rng.uniform(0.0, spec.sigma_max, size=n_obs)
    noisy = clean + sigma[:, None] * rng.standard_normal((n_obs, 2))
    sigma_px = (sigma ** 2)[:, None, None] * np.eye(2)[None]

    observations = pixels_to_rays(rig, pose_idx, cam_idx, noisy, sigma_px)
    bounds = np.r_[0, np.cumsum(counts[kept])]
    tracks = [
        Track(
            track_id=int(m),
            observations=observations.take(np.arange(bounds[j], bounds[j + 1])),
            world_hint=points[m].copy(),
        )
        for j, m in enumerate(kept)
    ]

    initial_poses = _perturb(gt_poses, spec, rng)
    problem = Problem(
        rig=rig,
        poses=initial_poses,
        tracks=tracks,
        mode=mode,
        settings=solver or settings.solver_settings(),
        gt_poses=gt_poses,
    )
    initial_points = reconstruct_points(tracks, initial_poses, TriangulationMethod.MIDPOINT).points
    logger.info(
        "Generated %s-%s problem: %d poses, %d tracks, %d observations (seed=%d)",
        spec.rig_preset, spec.trajectory, spec.n_poses, len(tracks), n_obs, spec.seed,
    )
    return SyntheticProblem(
        problem=problem,
        gt_poses=gt_poses,
        gt_points=points[kept],
        initial_points=initial_points,
    )
