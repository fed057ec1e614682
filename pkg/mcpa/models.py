"""Data models for multi-camera pose adjustment."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Mode(str, Enum):
    MCPA = "mcpa"
    MCPALR = "mcpalr"
    BASELINE_BA = "ba"

    @property
    def is_pose_only(self) -> bool:
        return self is not Mode.BASELINE_BA


# --- geometry ---

@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-body rigid transform: X_body = R @ X_world + t."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Apply ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ point + self.translation

    @property
    def center(self) -> np.ndarray:
        """Body origin expressed in the world frame."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Right perturbation: rotation R @ exp(phi), translation t + dt."""

    phi: np.ndarray
    dt: np.ndarray

    @classmethod
    def zero(cls) -> "Perturbation":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, delta: np.ndarray) -> "Perturbation":
        delta = np.asarray(delta, dtype=float)
        return cls(delta[:3].copy(), delta[3:6].copy())


# --- generalized camera model ---

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def contains(self, pixel: np.ndarray) -> bool:
        u, v = pixel[0], pixel[1]
        return bool(0.0 <= u < self.width and 0.0 <= v < self.height)


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """Camera-to-body transform: X_body = R_c @ X_cam + t_c."""

    rotation: np.ndarray
    translation: np.ndarray


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics


@dataclass(frozen=True, eq=False)
class RigConfig:
    cameras: tuple[Camera, ...]

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ValueError("a rig needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)

    def camera(self, index: int) -> Camera:
        if not 0 <= index < len(self.cameras):
            raise IndexError(f"camera index {index} out of range for {len(self.cameras)}-camera rig")
        return self.cameras[index]


@dataclass(frozen=True)
class Projection:
    """Pixel of a projected point. ``in_image`` False flags OutOfImage."""

    pixel: np.ndarray
    depth: float
    in_image: bool


@dataclass(frozen=True, eq=False)
class ObservationRay:
    """6D ray (f, v) in the body frame, with the covariance of f."""

    f: np.ndarray
    v: np.ndarray
    sigma_f: np.ndarray
    pose_id: int
    camera_id: int
    pixel: np.ndarray | None = None
    sigma_px: np.ndarray | None = None


@dataclass(eq=False)
class Observations:
    """Column-wise storage of a set of observation rays."""

    pose_id: np.ndarray
    camera_id: np.ndarray
    f: np.ndarray
    v: np.ndarray
    sigma_f: np.ndarray
    pixel: np.ndarray
    sigma_px: np.ndarray

    def __len__(self) -> int:
        return len(self.pose_id)

    def ray(self, k: int) -> ObservationRay:
        return ObservationRay(
            f=self.f[k],
            v=self.v[k],
            sigma_f=self.sigma_f[k],
            pose_id=int(self.pose_id[k]),
            camera_id=int(self.camera_id[k]),
            pixel=self.pixel[k],
            sigma_px=self.sigma_px[k],
        )

    def rays(self) -> list[ObservationRay]:
        return [self.ray(k) for k in range(len(self))]

    def take(self, index) -> "Observations":
        index = np.asarray(index)
        return Observations(
            pose_id=self.pose_id[index],
            camera_id=self.camera_id[index],
            f=self.f[index],
            v=self.v[index],
            sigma_f=self.sigma_f[index],
            pixel=self.pixel[index],
            sigma_px=self.sigma_px[index],
        )

    @classmethod
    def from_rays(cls, rays: list[ObservationRay]) -> "Observations":
        n = len(rays)
        pixel = np.full((n, 2), np.nan)
        sigma_px = np.zeros((n, 2, 2))
        for k, ray in enumerate(rays):
            if ray.pixel is not None:
                pixel[k] = ray.pixel
            if ray.sigma_px is not None:
                sigma_px[k] = ray.sigma_px
        return cls(
            pose_id=np.array([r.pose_id for r in rays], dtype=np.int64),
            camera_id=np.array([r.camera_id for r in rays], dtype=np.int64),
            f=np.array([r.f for r in rays], dtype=float).reshape(n, 3),
            v=np.array([r.v for r in rays], dtype=float).reshape(n, 3),
            sigma_f=np.array([r.sigma_f for r in rays], dtype=float).reshape(n, 3, 3),
            pixel=pixel,
            sigma_px=sigma_px,
        )

    @classmethod
    def concatenate(cls, parts: list["Observations"]) -> "Observations":
        return cls(
            pose_id=np.concatenate([p.pose_id for p in parts]),
            camera_id=np.concatenate([p.camera_id for p in parts]),
            f=np.concatenate([p.f for p in parts]),
            v=np.concatenate([p.v for p in parts]),
            sigma_f=np.concatenate([p.sigma_f for p in parts]),
            pixel=np.concatenate([p.pixel for p in parts]),
            sigma_px=np.concatenate([p.sigma_px for p in parts]),
        )


# --- pose-only constraint ---

@dataclass(frozen=True)
class BasePair:
    """Left/right base observation indices within a track."""

    l: int
    r: int

    def __post_init__(self):
        if self.l == self.r:
            raise ValueError("base observations must differ")


@dataclass(frozen=True)
class ScaleResult:
    s: float
    lam: float
    theta: float


@dataclass(eq=False)
class ResidualBlock:
    """Residual of one observation predicted from a base pair.

    ``jac_*`` are d e / d (phi, t) of the target, primary and secondary poses.
    ``blocks`` holds the same Jacobians summed per distinct pose id.
    """

    e: np.ndarray
    Y: np.ndarray
    pose_ids: tuple[int, int, int]
    jac_i: np.ndarray | None = None
    jac_l: np.ndarray | None = None
    jac_r: np.ndarray | None = None
    blocks: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass(eq=False)
class Track:
    track_id: int
    observations: Observations
    base: BasePair | None = None
    world_hint: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.observations)

    def ray(self, i: int) -> ObservationRay:
        return self.observations.ray(i)


# --- base selection ---

@dataclass(eq=False)
class PairUncertainty:
    X_hat: np.ndarray
    cov_X: np.ndarray
    roundness: float


# --- triangulation ---

@dataclass(eq=False)
class Reconstruction:
    """Points of a set of tracks. Rows of failed tracks are NaN and ``valid`` is False."""

    track_ids: np.ndarray
    points: np.ndarray
    valid: np.ndarray
    singular_weights: int = 0


# --- optimizer ---

@dataclass(frozen=True)
class SolverSettings:
    max_iters: int = 10
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    cost_rel_tol: float = 1e-10
    gradient_tol: float = 1e-10
    threads: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.lambda_init <= 0:
            raise ValueError("lambda_init must be positive")
        if self.lambda_up <= 1 or self.lambda_down <= 1:
            raise ValueError("lambda_up and lambda_down must exceed 1")


@dataclass(eq=False)
class Problem:
    rig: RigConfig
    poses: list[Pose]
    tracks: list[Track]
    mode: Mode = Mode.MCPA
    settings: SolverSettings = field(default_factory=SolverSettings)
    gt_poses: list[Pose] | None = None

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("a problem needs at least one pose")

    @property
    def n_poses(self) -> int:
        return len(self.poses)

    @property
    def n_observations(self) -> int:
        return sum(len(t) for t in self.tracks)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    cost: float
    lam: float
    accepted: bool
    wall_ms: float


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    accepted_steps: int = 0
    wall_time: float = 0.0
    hessian_bytes: int = 0
    hessian_block_bytes: int = 0
    point_block_bytes: int = 0
    dropped_tracks: int = 0
    termination: str = ""
    trace: list[IterationRecord] = field(default_factory=list)


@dataclass(frozen=True)
class Metrics:
    rotation: float
    translation: float
    translation_abs: float
    reprojection: float
    reconstruction: float
    excluded_translation: int = 0


# --- synthetic data ---

RIG_PRESETS = ("forward", "omni")
TRAJECTORIES = ("linear", "curve")


@dataclass(frozen=True)
class SynthSpec:
    rig_preset: str = "forward"
    trajectory: str = "linear"
    n_poses: int = 50
    n_points: int = 1000
    sigma_max: float = 4.0
    rot_perturb: float = 2.0
    trans_perturb: float = 0.5
    seed: int = 7

    def __post_init__(self):
        if self.rig_preset not in RIG_PRESETS:
            raise ValueError(f"unknown rig preset {self.rig_preset!r}")
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if self.n_poses < 2:
            raise ValueError("n_poses must be >= 2")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.sigma_max < 0:
            raise ValueError("sigma_max must be >= 0")


@dataclass(eq=False)
class SyntheticProblem:
    problem: Problem
    gt_poses: list[Pose]
    gt_points: np.ndarray
    initial_points: np.ndarray


# --- bench ---

@dataclass(frozen=True)
class BenchCell:
    n_poses: int
    n_points: int
    sigma_max: float
    mode: Mode


@dataclass(frozen=True)
class BenchSpec:
    cells: tuple[BenchCell, ...]
    trials: int = 1
    seed_base: int = 0
    rig_preset: str = "forward"
    trajectory: str = "linear"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
