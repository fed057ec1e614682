"""Benchmark grid: synthetic problems solved per (cell, trial), written as CSV.

Each trial draws its problem from seed ``seed_base + trial``, so every mode of
a cell sees the same data. A run that raises ``MCPAError``, ``ValueError`` or
``LinAlgError`` becomes a row with the error class in the ``status`` column
and the grid continues.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from mcpa.config import Settings, get_settings
from mcpa.exceptions import MCPAError
from mcpa.models import BenchCell, BenchSpec, Mode, SynthSpec
from mcpa.services.atomic import write_text_atomic
from mcpa.services.metrics import align_to_anchor, error_metrics
from mcpa.services.optimizer import solve_problem
from mcpa.services.problem_io import _parse, csv_text
from mcpa.services.synth import generate_problem

logger = logging.getLogger(__name__)

ROW_HEADER = [
    "cell", "trial", "mode", "status", "poses", "points", "observations",
    "runtime_s", "hessian_bytes", "rot_err", "trans_err", "recon_err",
]
SUMMARY_HEADER = [
    "cell", "mode", "poses", "points", "sigma_max", "ok_trials",
    "runtime_s", "hessian_bytes", "rot_err", "trans_err", "recon_err",
]
MEDIAN_COLUMNS = ("runtime_s", "hessian_bytes", "rot_err", "trans_err", "recon_err")


class BenchCellRecord(BaseModel):
    poses: int = Field(ge=2)
    points: int = Field(ge=1)
    sigma_max: float = Field(ge=0)
    modes: list[Mode] = Field(default_factory=lambda: [Mode.MCPA, Mode.MCPALR, Mode.BASELINE_BA], min_length=1)


class BenchRecord(BaseModel):
    cells: list[BenchCellRecord] = Field(min_length=1)
    trials: int = Field(default=1, ge=1)
    seed_base: int = 0
    rig_preset: str = "forward"
    trajectory: str = "linear"


def read_bench_spec(path: Path) -> BenchSpec:
    """A grid file lists cells; each cell expands to one BenchCell per mode."""
    record = _parse(BenchRecord, Path(path).read_text(encoding="utf-8"), str(path))
    cells = tuple(
        BenchCell(n_poses=c.poses, n_points=c.points, sigma_max=c.sigma_max, mode=mode)
        for c in record.cells
        for mode in c.modes
    )
    return BenchSpec(
        cells=cells,
        trials=record.trials,
        seed_base=record.seed_base,
        rig_preset=record.rig_preset,
        trajectory=record.trajectory,
    )


@dataclass
class BenchRow:
    cell: int
    trial: int
    mode: Mode
    status: str
    poses: int
    points: int
    observations: int = 0
    runtime_s: float = float("nan")
    hessian_bytes: int = 0
    rot_err: float = float("nan")
    trans_err: float = float("nan")
    recon_err: float = float("nan")

    def values(self) -> list:
        return [
            self.cell, self.trial, self.mode.value, self.status, self.poses, self.points,
            self.observations, self.runtime_s, self.hessian_bytes, self.rot_err,
            self.trans_err, self.recon_err,
        ]


def run_cell(index: int, cell: BenchCell, trial: int, spec: BenchSpec, settings: Settings) -> BenchRow:
    row = BenchRow(cell=index, trial=trial, mode=cell.mode, status="ok", poses=cell.n_poses, points=cell.n_points)
    synth = SynthSpec(
        rig_preset=spec.rig_preset,
        trajectory=spec.trajectory,
        n_poses=cell.n_poses,
        n_points=cell.n_points,
        sigma_max=cell.sigma_max,
        seed=spec.seed_base + trial,
    )
    try:
        data = generate_problem(synth, mode=cell.mode, settings=settings)
        problem = data.problem
        row.observations = problem.n_observations
        poses, points, report = solve_problem(problem)
        poses, points = align_to_anchor(poses, data.gt_poses, points)
        metrics = error_metrics(poses, data.gt_poses, points, data.gt_points)
    except (MCPAError, ValueError, np.linalg.LinAlgError) as exc:
        logger.warning("Cell %d trial %d (%s) failed: %s", index, trial, cell.mode.value, exc)
        row.status = type(exc).__name__
        return row

    row.runtime_s = report.wall_time if settings.record_timing else 0.0
    row.hessian_bytes = report.hessian_bytes
    row.rot_err = metrics.rotation
    row.trans_err = metrics.translation
    row.recon_err = metrics.reconstruction
    return row


def summarize(rows: list[BenchRow], spec: BenchSpec) -> list[list]:
    """Median of every metric column over the successful trials of each cell."""
    summary = []
    for index, cell in enumerate(spec.cells):
        ok = [r for r in rows if r.cell == index and r.status == "ok"]
        medians = [
            float(np.median([getattr(r, name) for r in ok])) if ok else float("nan")
            for name in MEDIAN_COLUMNS
        ]
        summary.append([
            index, cell.mode.value, cell.n_poses, cell.n_points, float(cell.sigma_max), len(ok), *medians,
        ])
    return summary


def run_bench(
    spec: BenchSpec,
    out_path: Path | None = None,
    summary_path: Path | None = None,
    settings: Settings | None = None,
) -> list[BenchRow]:
    settings = settings or get_settings()
    rows = []
    for trial in range(spec.trials):
        for index, cell in enumerate(spec.cells):
            rows.append(run_cell(index, cell, trial, spec, settings))
    rows.sort(key=lambda r: (r.cell, r.trial))

    failed = sum(r.status != "ok" for r in rows)
    logger.info("Bench finished: %d runs, %d failed", len(rows), failed)
    if out_path is not None:
        write_text_atomic(out_path, csv_text(ROW_HEADER, [r.values() for r in rows]))
        logger.info("Wrote %s", out_path)
    if summary_path is not None:
        write_text_atomic(summary_path, csv_text(SUMMARY_HEADER, summarize(rows, spec)))
        logger.info("Wrote %s", summary_path)
    return rows
