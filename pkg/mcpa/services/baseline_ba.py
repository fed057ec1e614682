"""Baseline multi-camera bundle adjustment over poses and points.

Residuals are pixel reprojection errors. Point blocks are eliminated with a
Schur complement before the pose step is solved, as in conventional BA.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from mcpa.exceptions import EmptyProblem
from mcpa.geometry import exp_so3_batch, nearest_rotation, skew_batch, stack_poses, unstack_poses
from mcpa.models import Observations, Pose, Problem, SolveReport, Track
from mcpa.services.lm import LevenbergMarquardt
from mcpa.triangulate import TriangulationMethod, reconstruct_points

logger = logging.getLogger(__name__)

DIAG_FLOOR = 1e-12
MIN_DEPTH = 1e-9

BAState = tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class BASystem:
    U: sp.csr_matrix
    V: np.ndarray
    W: sp.csr_matrix
    g_pose: np.ndarray
    g_point: np.ndarray


class BundleAdjuster:
    """Joint pose and point refinement. Implements the LM model interface.

    States that put a point at or behind a camera cost ``inf``, so the LM
    driver rejects any step that leaves the cheiral region.
    """

    def __init__(self, problem: Problem, points: np.ndarray | None = None):
        self.problem = problem
        self.settings = problem.settings
        self.n_poses = problem.n_poses

        if points is None:
            points = reconstruct_points(problem.tracks, problem.poses, TriangulationMethod.MIDPOINT).points
        points = np.asarray(points, dtype=float)
        usable = np.all(np.isfinite(points), axis=1)
        unset = int((~usable).sum())
        self._index([t for t, ok in zip(problem.tracks, usable) if ok])

        # an initial point must lie in front of every camera that sees it
        rotations, translations = stack_poses(problem.poses)
        xc, _ = self._camera_points((rotations, translations, points[usable]))
        nearest = np.full(self.n_points, np.inf)
        np.minimum.at(nearest, self.point_id, xc[:, 2])
        cheiral = nearest > MIN_DEPTH
        behind = int((~cheiral).sum())
        if behind:
            usable[usable] = cheiral
            self._index([t for t, ok in zip(problem.tracks, usable) if ok])

        self._usable = usable
        self.dropped_tracks = unset + behind
        if unset:
            logger.warning("Dropped %d tracks without an initial point", unset)
        if behind:
            logger.warning("Dropped %d tracks whose initial point is behind a camera", behind)
        self.initial_points = points[usable]
        logger.info(
            "Bundle adjustment: %d poses, %d points, %d observations",
            self.n_poses, self.n_points, len(self.pose_id),
        )

    def _index(self, tracks: list[Track]) -> None:
        if not tracks:
            raise EmptyProblem("no track has an initial point in front of its cameras")
        self.tracks = tracks
        self.n_points = len(tracks)
        obs = Observations.concatenate([t.observations for t in tracks])
        self.pose_id = obs.pose_id
        self.camera_id = obs.camera_id
        self.point_id = np.concatenate([np.full(len(t), k) for k, t in enumerate(tracks)])
        self.pixels = obs.pixel

        rig = self.problem.rig
        self._cam_rotation = np.array([c.extrinsics.rotation for c in rig.cameras])[self.camera_id]
        self._cam_translation = np.array([c.extrinsics.translation for c in rig.cameras])[self.camera_id]
        intrinsics = [c.intrinsics for c in rig.cameras]
        self._focal = np.array([[k.fx, k.fy] for k in intrinsics])[self.camera_id]
        self._center = np.array([[k.cx, k.cy] for k in intrinsics])[self.camera_id]

    def _camera_points(self, state: BAState) -> tuple[np.ndarray, np.ndarray]:
        rotations, translations, points = state
        R = rotations[self.pose_id]
        X = points[self.point_id]
        body = np.einsum("nij,nj->ni", R, X) + translations[self.pose_id]
        xc = np.einsum("nji,nj->ni", self._cam_rotation, body - self._cam_translation)
        return xc, X

    def _reproject(self, xc: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        front = xc[:, 2] > MIN_DEPTH
        z = np.where(front, xc[:, 2], 1.0)
        r = self._focal * xc[:, :2] / z[:, None] + self._center - self.pixels
        r[~front] = 0.0
        return r, z, front

    def residuals(self, state: BAState) -> np.ndarray:
        """Pixel residuals, zero for observations at or behind the camera."""
        xc, _ = self._camera_points(state)
        return self._reproject(xc)[0]

    def cost(self, state: BAState) -> float:
        xc, _ = self._camera_points(state)
        r, _, front = self._reproject(xc)
        if not front.all():
            return float("inf")
        return float(np.einsum("ni,ni->", r, r))

    def jacobians(self, state: BAState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Residuals and their (N, 2, 6) pose and (N, 2, 3) point Jacobians."""
        rotations, _, _ = state
        xc, X = self._camera_points(state)
        r, z, front = self._reproject(xc)
        n = len(z)
        d_pixel = np.zeros((n, 2, 3))
        d_pixel[:, 0, 0] = self._focal[:, 0] / z
        d_pixel[:, 0, 2] = -self._focal[:, 0] * xc[:, 0] / z ** 2
        d_pixel[:, 1, 1] = self._focal[:, 1] / z
        d_pixel[:, 1, 2] = -self._focal[:, 1] * xc[:, 1] / z ** 2
        d_pixel[~front] = 0.0

        R = rotations[self.pose_id]
        rc_t = np.swapaxes(self._cam_rotation, 1, 2)
        dxc_dphi = -rc_t @ R @ skew_batch(X)
        dxc_dX = rc_t @ R
        J_pose = np.concatenate([d_pixel @ dxc_dphi, d_pixel @ rc_t], axis=2)
        J_point = d_pixel @ dxc_dX
        return r, J_pose, J_point

    def _sparse_jacobians(self, J_pose: np.ndarray, J_point: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        n = len(J_pose)
        row_base = (2 * np.arange(n))[:, None, None] + np.arange(2)[None, :, None]
        pose_rows = np.broadcast_to(row_base, J_pose.shape)
        pose_cols = np.broadcast_to((6 * self.pose_id)[:, None, None] + np.arange(6)[None, None, :], J_pose.shape)
        free = np.broadcast_to((self.pose_id != 0)[:, None, None], J_pose.shape)
        A = sp.coo_matrix(
            (J_pose[free], (pose_rows[free], pose_cols[free])), shape=(2 * n, 6 * self.n_poses)
        ).tocsr()
        point_rows = np.broadcast_to(row_base, J_point.shape)
        point_cols = np.broadcast_to((3 * self.point_id)[:, None, None] + np.arange(3)[None, None, :], J_point.shape)
        B = sp.coo_matrix(
            (J_point.ravel(), (point_rows.ravel(), point_cols.ravel())), shape=(2 * n, 3 * self.n_points)
        ).tocsr()
        return A, B

    def linearize(self, state: BAState) -> tuple[BASystem, np.ndarray]:
        r, J_pose, J_point = self.jacobians(state)
        A, B = self._sparse_jacobians(J_pose, J_point)
        e = r.reshape(-1)
        dim = 6 * self.n_poses
        U = (A.T @ A + sp.diags(np.r_[np.ones(6), np.zeros(dim - 6)])).tocsr()
        V = np.zeros((self.n_points, 3, 3))
        np.add.at(V, self.point_id, np.swapaxes(J_point, 1, 2) @ J_point)
        W = (A.T @ B).tocsr()
        g_pose = -(A.T @ e)
        g_point = -(B.T @ e)
        return BASystem(U, V, W, g_pose, g_point), np.r_[g_pose, g_point]

    def _damped(self, system: BASystem, lam: float) -> tuple[np.ndarray, np.ndarray]:
        U = system.U.toarray()
        U = U + lam * np.diag(np.maximum(np.diag(U), DIAG_FLOOR))
        diag_v = np.maximum(np.diagonal(system.V, axis1=1, axis2=2), DIAG_FLOOR)
        V = system.V + lam * diag_v[:, :, None] * np.eye(3)[None]
        return U, V

    def solve(self, system: BASystem, lam: float) -> np.ndarray:
        """Schur-complement step: eliminate points, solve poses, back-substitute."""
        U, V = self._damped(system, lam)
        V_inv = np.linalg.inv(V)
        V_inv_sparse = _block_diagonal(V_inv)
        W = system.W
        WV = W @ V_inv_sparse
        S = U - (WV @ W.T).toarray()
        rhs = system.g_pose - WV @ system.g_point.reshape(-1)
        delta_pose = np.zeros(6 * self.n_poses)
        if self.n_poses > 1:
            factor = cho_factor(S[6:, 6:], check_finite=False)
            delta_pose[6:] = cho_solve(factor, rhs[6:], check_finite=False)
        back = system.g_point.reshape(-1) - W.T @ delta_pose
        delta_point = np.einsum("mij,mj->mi", V_inv, back.reshape(-1, 3))
        return np.r_[delta_pose, delta_point.reshape(-1)]

    def dense_step(self, system: BASystem, lam: float) -> np.ndarray:
        """Same step as ``solve`` from the full dense normal equations."""
        U, V = self._damped(system, lam)
        W = system.W.toarray()
        H = np.block([[U, W], [W.T, _block_diagonal(V).toarray()]])
        g = np.r_[system.g_pose, system.g_point.reshape(-1)]
        free = np.r_[np.zeros(6, dtype=bool), np.ones(len(g) - 6, dtype=bool)]
        delta = np.zeros(len(g))
        delta[free] = np.linalg.solve(H[np.ix_(free, free)], g[free])
        return delta

    def retract(self, state: BAState, delta: np.ndarray) -> BAState:
        rotations, translations, points = state
        rotations = rotations.copy()
        translations = translations.copy()
        d = delta[:6 * self.n_poses].reshape(self.n_poses, 6)
        if self.n_poses > 1:
            rotations[1:] = nearest_rotation(rotations[1:] @ exp_so3_batch(d[1:, :3]))
            translations[1:] += d[1:, 3:]
        points = points + delta[6 * self.n_poses:].reshape(-1, 3)
        return rotations, translations, points

    def initial_state(self) -> BAState:
        rotations, translations = stack_poses(self.problem.poses)
        return rotations, translations, self.initial_points.copy()

    def memory(self, system: BASystem) -> tuple[int, int, int]:
        """Dense Hessian bound, stored Hessian bytes and point-block bytes."""
        point_block = 9 * self.n_points * 8
        stored = (system.U.nnz + 2 * system.W.nnz) * 8 + point_block
        return dense_hessian_bytes(self.n_poses, self.n_points), stored, point_block

    def run(self) -> tuple[list[Pose], np.ndarray, SolveReport]:
        state, report = LevenbergMarquardt(self.settings).run(self, self.initial_state())
        system, _ = self.linearize(state)
        report.hessian_bytes, report.hessian_block_bytes, report.point_block_bytes = self.memory(system)
        report.dropped_tracks = self.dropped_tracks
        logger.info(
            "Bundle adjustment finished: cost %.6e -> %.6e in %d iterations (%s)",
            report.initial_cost, report.final_cost, report.iterations, report.termination,
        )
        rotations, translations, points = state
        full = np.full((len(self.problem.tracks), 3), np.nan)
        full[self._usable] = points
        return unstack_poses(rotations, translations), full, report


def baseline_ba_solve(problem: Problem, points: np.ndarray | None = None) -> tuple[list[Pose], np.ndarray, SolveReport]:
    """Returns refined poses, points aligned with problem.tracks (NaN where dropped) and the report."""
    return BundleAdjuster(problem, points).run()


def _block_diagonal(blocks: np.ndarray) -> sp.bsr_matrix:
    m = len(blocks)
    return sp.bsr_matrix((blocks, np.arange(m), np.arange(m + 1)), shape=(3 * m, 3 * m))


def dense_hessian_bytes(n_poses: int, n_points: int = 0) -> int:
    """Bytes of a dense float64 Hessian over 6 parameters per pose and 3 per point."""
    dim = 6 * n_poses + 3 * n_points
    return dim * dim * 8
