import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from mcpa.base_select import BaseStrategy, assign_bases
from mcpa.config import Settings
from mcpa.models import Metrics, Mode, Reconstruction, SolveReport
from mcpa.services.metrics import align_to_anchor, error_metrics
from mcpa.services.optimizer import solve_problem
from mcpa.services.problem_io import read_problem, write_points, write_poses, write_report, write_summary

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("optimize", help="refine the poses of a problem file")
    parser.add_argument("--problem", type=Path, required=True)
    parser.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.MCPA.value)
    parser.add_argument("--max-iters", type=int, help="overrides MCPA_MAX_ITERS")
    parser.add_argument("--base-strategy", choices=[s.value for s in BaseStrategy], default=BaseStrategy.ROUNDNESS.value,
                        help="for tracks without a stored base")
    parser.add_argument("--seed", type=int, default=0, help="seed of the random base strategy")
    parser.add_argument("--out", type=Path, help="refined pose file")
    parser.add_argument("--points", type=Path, help="refined points CSV")
    parser.add_argument("--report", type=Path, help="per-iteration CSV")
    parser.add_argument("--summary", type=Path, help="JSON summary with costs, memory and metrics")
    parser.set_defaults(handler=run)


def _finite(value: float) -> float | None:
    return value if math.isfinite(value) else None


def build_summary(mode: Mode, report: SolveReport, metrics: Metrics | None, record_timing: bool) -> dict:
    summary = {
        "mode": mode.value,
        "termination": report.termination,
        "iterations": report.iterations,
        "accepted_steps": report.accepted_steps,
        "initial_cost": report.initial_cost,
        "final_cost": report.final_cost,
        "runtime_s": report.wall_time if record_timing else 0.0,
        "hessian_bytes": report.hessian_bytes,
        "hessian_block_bytes": report.hessian_block_bytes,
        "point_block_bytes": report.point_block_bytes,
        "dropped_tracks": report.dropped_tracks,
    }
    if metrics is not None:
        summary["metrics"] = {
            "rot_err": _finite(metrics.rotation),
            "trans_err": _finite(metrics.translation),
            "trans_err_abs": _finite(metrics.translation_abs),
            "reproj_err": _finite(metrics.reprojection),
            "recon_err": _finite(metrics.reconstruction),
            "excluded_translation": metrics.excluded_translation,
        }
    return summary


def run(args, settings: Settings) -> None:
    mode = Mode(args.mode)
    problem = read_problem(args.problem, mode, settings.solver_settings(max_iters=args.max_iters))
    if mode.is_pose_only:
        tracks, _ = assign_bases(problem.tracks, problem.poses, BaseStrategy(args.base_strategy), args.seed)
        problem = replace(problem, tracks=tracks)

    poses, points, report = solve_problem(problem)

    metrics = None
    if problem.gt_poses is not None:
        hints = [t.world_hint for t in problem.tracks]
        gt_points = np.array(hints) if hints and all(h is not None for h in hints) else None
        aligned, aligned_points = align_to_anchor(poses, problem.gt_poses, points)
        metrics = error_metrics(aligned, problem.gt_poses, aligned_points, gt_points, problem)

    if args.out:
        write_poses(args.out, poses)
    if args.points:
        valid = np.all(np.isfinite(points), axis=1)
        track_ids = np.array([t.track_id for t in problem.tracks], dtype=np.int64)
        write_points(args.points, Reconstruction(track_ids=track_ids, points=points, valid=valid))
    if args.report:
        write_report(args.report, report, settings.record_timing)
    if args.summary:
        write_summary(args.summary, build_summary(mode, report, metrics, settings.record_timing))

    line = f"{mode.value}: cost {report.initial_cost:.6e} -> {report.final_cost:.6e} in {report.iterations} iterations"
    if metrics is not None:
        line += f", rot_err {metrics.rotation:.3e} rad, trans_err {metrics.translation:.3e}"
    print(line)
