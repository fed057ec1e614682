import os

import numpy as np
import pytest

from mcpa.config import Settings
from mcpa.gcm import pixels_to_rays, project
from mcpa.geometry import exp_so3
from mcpa.models import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    Mode,
    Pose,
    Problem,
    RigConfig,
    SolverSettings,
    Track,
)

# Prevent tests from reading MCPA_* variables of the developer's shell
for _name in [k for k in os.environ if k.startswith("MCPA_")]:
    os.environ.pop(_name)


def _make_intrinsics(**overrides) -> CameraIntrinsics:
    defaults = dict(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    defaults.update(overrides)
    return CameraIntrinsics(**defaults)


def _make_rig(n_cameras: int = 2, baseline: float = 0.5) -> RigConfig:
    """Forward-looking cameras spaced along body x, each yawed slightly."""
    cameras = []
    for k in range(n_cameras):
        rotation = exp_so3(np.array([0.0, 0.05 * k, 0.0]))
        cameras.append(Camera(_make_intrinsics(), CameraExtrinsics(rotation, np.array([baseline * k, 0.0, 0.0]))))
    return RigConfig(tuple(cameras))


def _make_pose(rng: np.random.Generator, angle: float = 0.05, shift: float = 1.0) -> Pose:
    return Pose(exp_so3(rng.normal(scale=angle, size=3)), rng.normal(scale=shift, size=3))


def _make_poses(n: int, seed: int = 0, angle: float = 0.05, shift: float = 1.0) -> list[Pose]:
    rng = np.random.default_rng(seed)
    return [_make_pose(rng, angle, shift) for _ in range(n)]


def _make_track(
    point: np.ndarray,
    poses: list[Pose],
    rig: RigConfig,
    slots: list[tuple[int, int]],
    sigma: float = 1.0,
    track_id: int = 0,
    noise: np.ndarray | None = None,
) -> Track:
    """Observations of ``point`` from (pose_id, camera_id) slots, projected through the rig."""
    pixels = np.array([project(rig, c, poses[p], point).pixel for p, c in slots])
    if noise is not None:
        pixels = pixels + noise
    observations = pixels_to_rays(
        rig,
        np.array([p for p, _ in slots]),
        np.array([c for _, c in slots]),
        pixels,
        np.broadcast_to(sigma ** 2 * np.eye(2), (len(slots), 2, 2)),
    )
    return Track(track_id=track_id, observations=observations, world_hint=np.asarray(point, dtype=float))


def _make_points(n: int, seed: int = 1) -> np.ndarray:
    """Points 8-15 m in front of the rig."""
    rng = np.random.default_rng(seed)
    return np.column_stack([
        rng.uniform(-3.0, 3.0, n),
        rng.uniform(-2.0, 2.0, n),
        rng.uniform(8.0, 15.0, n),
    ])


def _make_problem(
    n_poses: int = 4,
    n_points: int = 30,
    n_cameras: int = 2,
    mode: Mode = Mode.MCPA,
    seed: int = 0,
    **settings,
) -> Problem:
    """Noise-free problem where every point is seen by every (pose, camera) slot."""
    rig = _make_rig(n_cameras)
    poses = _make_poses(n_poses, seed, angle=0.02, shift=0.3)
    points = _make_points(n_points, seed + 1)
    slots = [(p, c) for p in range(n_poses) for c in range(n_cameras)]
    tracks = [_make_track(X, poses, rig, slots, track_id=k) for k, X in enumerate(points)]
    return Problem(
        rig=rig,
        poses=poses,
        tracks=tracks,
        mode=mode,
        settings=SolverSettings(**settings),
        gt_poses=[Pose(p.rotation.copy(), p.translation.copy()) for p in poses],
    )


def _perturb(poses: list[Pose], seed: int = 3, angle: float = 0.01, shift: float = 0.05) -> list[Pose]:
    """Perturb every pose except the gauge anchor."""
    rng = np.random.default_rng(seed)
    out = [poses[0]]
    for pose in poses[1:]:
        out.append(Pose(
            pose.rotation @ exp_so3(rng.normal(scale=angle, size=3)),
            pose.translation + rng.normal(scale=shift, size=3),
        ))
    return out


@pytest.fixture
def settings():
    """Settings that ignore any .env file, with deterministic CSV output."""
    return Settings(_env_file=None, record_timing=False)


@pytest.fixture
def rig():
    return _make_rig()


@pytest.fixture
def problem():
    return _make_problem()
