"""Pose-only Levenberg-Marquardt solver (MCPA and MCPALR cost functions).

Residual rows are laid out once from the tracks' base pairs and evaluated in
vectorized chunks. Pose 0 is the gauge anchor: its Jacobian columns are
dropped and its Hessian block is clamped to identity, so the linear system
actually solved has dimension 6 * (P - 1).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from mcpa.base_select import assign_bases
from mcpa.exceptions import EmptyProblem
from mcpa.geometry import exp_so3_batch, nearest_rotation, stack_poses, unstack_poses
from mcpa.models import Mode, Observations, Pose, Problem, SolveReport, Track
from mcpa.pose_only import MIN_THETA, RayRows, evaluate_rows
from mcpa.services.baseline_ba import baseline_ba_solve, dense_hessian_bytes
from mcpa.services.lm import LevenbergMarquardt
from mcpa.triangulate import TriangulationMethod, reconstruct_points

logger = logging.getLogger(__name__)

CHUNK_ROWS = 20000
DIAG_FLOOR = 1e-12

PoseState = tuple[np.ndarray, np.ndarray]


@dataclass
class ResidualLayout:
    """Row-wise (primary, secondary, target) observation indices into ``observations``."""

    observations: Observations
    primary: np.ndarray
    secondary: np.ndarray
    target: np.ndarray
    track_index: np.ndarray

    def __len__(self) -> int:
        return len(self.target)

    def rows(self, index: np.ndarray | slice) -> tuple[RayRows, RayRows, RayRows]:
        obs = self.observations
        return tuple(
            RayRows(obs.f[cols], obs.v[cols], obs.pose_id[cols])
            for cols in (self.primary[index], self.secondary[index], self.target[index])
        )


def build_layout(tracks: list[Track], mode: Mode) -> ResidualLayout:
    """Left rows for every i != l; MCPALR adds right rows for every i != r."""
    primary, secondary, target, track_index = [], [], [], []
    offset = 0
    for k, track in enumerate(tracks):
        n = len(track)
        idx = np.arange(n)
        l, r = track.base.l, track.base.r
        families = [(l, r)] if mode is Mode.MCPA else [(l, r), (r, l)]
        for prim, sec in families:
            tgt = idx[idx != prim]
            primary.append(np.full(len(tgt), offset + prim))
            secondary.append(np.full(len(tgt), offset + sec))
            target.append(offset + tgt)
            track_index.append(np.full(len(tgt), k))
        offset += n

    def cat(parts):
        return np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)

    observations = Observations.concatenate([t.observations for t in tracks]) if tracks else None
    return ResidualLayout(observations, cat(primary), cat(secondary), cat(target), cat(track_index))


@dataclass
class NormalEquations:
    H: sp.csr_matrix
    g: np.ndarray


class PoseAdjuster:
    """Pose-only adjustment of one problem. Implements the LM model interface."""

    def __init__(self, problem: Problem):
        if not problem.mode.is_pose_only:
            raise ValueError(f"mode {problem.mode.value} is not a pose-only mode")
        self.problem = problem
        self.mode = problem.mode
        self.settings = problem.settings
        self.n_poses = problem.n_poses

        tracks, dropped = assign_bases(problem.tracks, problem.poses)
        tracks, degenerate = self._drop_degenerate(tracks, problem.poses)
        self.dropped_tracks = dropped + degenerate
        if not tracks:
            raise EmptyProblem("no track has a usable base pair")
        self.tracks = tracks
        self.layout = build_layout(tracks, self.mode)

        observed = np.unique(self.layout.observations.pose_id)
        unobserved = self.n_poses - len(observed)
        if unobserved:
            logger.warning("%d poses have no observations and will not move", unobserved)
        logger.info(
            "Pose adjustment (%s): %d poses, %d tracks, %d residual rows",
            self.mode.value, self.n_poses, len(tracks), len(self.layout),
        )

    @staticmethod
    def _drop_degenerate(tracks: list[Track], poses: list[Pose]) -> tuple[list[Track], int]:
        if not tracks:
            return tracks, 0
        rotations, translations = stack_poses(poses)
        obs = Observations.concatenate([t.observations for t in tracks])
        offsets = np.cumsum([0] + [len(t) for t in tracks[:-1]])
        left = offsets + np.array([t.base.l for t in tracks])
        right = offsets + np.array([t.base.r for t in tracks])
        primary = RayRows(obs.f[left], obs.v[left], obs.pose_id[left])
        secondary = RayRows(obs.f[right], obs.v[right], obs.pose_id[right])
        theta = evaluate_rows(rotations, translations, primary, secondary, secondary).theta
        usable = theta >= MIN_THETA
        dropped = int((~usable).sum())
        if dropped:
            logger.warning("Dropped %d tracks with parallel base rays", dropped)
        return [t for t, ok in zip(tracks, usable) if ok], dropped

    # --- evaluation ---

    def _chunks(self) -> list[slice]:
        n = len(self.layout)
        threads = max(1, self.settings.threads)
        size = max(1, min(CHUNK_ROWS, -(-n // threads)))
        return [slice(start, min(start + size, n)) for start in range(0, n, size)]

    def _map(self, fn) -> list:
        chunks = self._chunks()
        if self.settings.threads <= 1 or len(chunks) == 1:
            return [fn(c) for c in chunks]
        with ThreadPoolExecutor(max_workers=self.settings.threads) as pool:
            return list(pool.map(fn, chunks))

    def residuals(self, state: PoseState) -> np.ndarray:
        rotations, translations = state

        def chunk(index):
            return evaluate_rows(rotations, translations, *self.layout.rows(index)).e

        parts = self._map(chunk)
        return np.concatenate(parts) if parts else np.zeros((0, 3))

    def cost(self, state: PoseState) -> float:
        rotations, translations = state

        def chunk(index):
            e = evaluate_rows(rotations, translations, *self.layout.rows(index)).e
            return float(np.einsum("ni,ni->", e, e))

        return float(sum(self._map(chunk)))

    def _chunk_system(self, state: PoseState, index: slice) -> tuple[sp.csr_matrix, np.ndarray]:
        rotations, translations = state
        primary, secondary, target = self.layout.rows(index)
        ev = evaluate_rows(rotations, translations, primary, secondary, target, jacobians=True)
        n = len(ev.e)
        dim = 6 * self.n_poses

        blocks = np.concatenate([ev.jac_target, ev.jac_primary, ev.jac_secondary])
        pose_ids = np.concatenate([target.pose_id, primary.pose_id, secondary.pose_id])
        row_ids = np.tile(np.arange(n), 3)
        rows = np.broadcast_to((3 * row_ids)[:, None, None] + np.arange(3)[None, :, None], blocks.shape)
        cols = np.broadcast_to((6 * pose_ids)[:, None, None] + np.arange(6)[None, None, :], blocks.shape)
        free = np.broadcast_to((pose_ids != 0)[:, None, None], blocks.shape)

        # duplicate (row, col) entries are summed, merging blocks of shared poses
        J = sp.coo_matrix((blocks[free], (rows[free], cols[free])), shape=(3 * n, dim)).tocsr()
        return (J.T @ J).tocsr(), -(J.T @ ev.e.reshape(-1))

    def linearize(self, state: PoseState) -> tuple[NormalEquations, np.ndarray]:
        parts = self._map(lambda index: self._chunk_system(state, index))
        dim = 6 * self.n_poses
        H = sp.csr_matrix((dim, dim))
        g = np.zeros(dim)
        for H_part, g_part in parts:
            H = H + H_part
            g += g_part
        gauge = sp.diags(np.r_[np.ones(6), np.zeros(dim - 6)])
        H = (H + gauge).tocsr()
        return NormalEquations(H=H, g=g), g

    def solve(self, system: NormalEquations, lam: float) -> np.ndarray:
        if self.n_poses == 1:
            return np.zeros(6)
        H = system.H[6:, 6:].toarray()
        diagonal = np.maximum(np.diag(H), DIAG_FLOOR)
        damped = H + lam * np.diag(diagonal)
        factor = cho_factor(damped, lower=False, check_finite=False)
        delta = np.zeros(6 * self.n_poses)
        delta[6:] = cho_solve(factor, system.g[6:], check_finite=False)
        return delta

    def retract(self, state: PoseState, delta: np.ndarray) -> PoseState:
        rotations, translations = state
        rotations = rotations.copy()
        translations = translations.copy()
        d = delta.reshape(self.n_poses, 6)
        if self.n_poses > 1:
            rotations[1:] = nearest_rotation(rotations[1:] @ exp_so3_batch(d[1:, :3]))
            translations[1:] += d[1:, 3:]
        return rotations, translations

    # --- driver ---

    def initial_state(self) -> PoseState:
        return stack_poses(self.problem.poses)

    def run(self) -> tuple[list[Pose], SolveReport]:
        state, report = LevenbergMarquardt(self.settings).run(self, self.initial_state())
        report.hessian_bytes = dense_hessian_bytes(self.n_poses)
        system, _ = self.linearize(state)
        report.hessian_block_bytes = int(system.H.nnz) * 8
        report.dropped_tracks = self.dropped_tracks
        logger.info(
            "Pose adjustment finished: cost %.6e -> %.6e in %d iterations (%s)",
            report.initial_cost, report.final_cost, report.iterations, report.termination,
        )
        return unstack_poses(*state), report


def build_cost(problem: Problem) -> float:
    adjuster = PoseAdjuster(problem)
    return adjuster.cost(adjuster.initial_state())


def build_normal_equations(problem: Problem) -> tuple[sp.csr_matrix, np.ndarray]:
    adjuster = PoseAdjuster(problem)
    system, g = adjuster.linearize(adjuster.initial_state())
    return system.H, g


def lm_solve(problem: Problem) -> tuple[list[Pose], SolveReport]:
    return PoseAdjuster(problem).run()


def solve_problem(problem: Problem) -> tuple[list[Pose], np.ndarray, SolveReport]:
    """Solve with the problem's mode.

    Points are aligned with ``problem.tracks`` and NaN where a track has none.
    Pose-only modes triangulate them with SOT at the refined poses.
    """
    if problem.mode is Mode.BASELINE_BA:
        return baseline_ba_solve(problem)
    poses, report = lm_solve(problem)
    points = reconstruct_points(problem.tracks, poses, TriangulationMethod.SOT).points
    return poses, points, report
