"""Levenberg-Marquardt driver shared by the pose-only and baseline solvers."""

import logging
import time
from typing import Any, Protocol

import numpy as np

from mcpa.exceptions import LinearSolveFailure
from mcpa.models import IterationRecord, SolveReport, SolverSettings

logger = logging.getLogger(__name__)

MAX_SOLVE_FAILURES = 10
MAX_REJECTIONS = 10


class LeastSquaresModel(Protocol):
    """What the driver needs from a problem. ``state`` is opaque to it."""

    def cost(self, state: Any) -> float: ...

    def linearize(self, state: Any) -> tuple[Any, np.ndarray]:
        """Return the normal-equation system and the gradient g = -J^T e."""
        ...

    def solve(self, system: Any, lam: float) -> np.ndarray:
        """Solve the damped system. Raises numpy.linalg.LinAlgError if not positive definite."""
        ...

    def retract(self, state: Any, delta: np.ndarray) -> Any: ...


class LevenbergMarquardt:
    def __init__(self, settings: SolverSettings):
        self._settings = settings

    def run(self, model: LeastSquaresModel, state: Any) -> tuple[Any, SolveReport]:
        s = self._settings
        report = SolveReport()
        start = time.perf_counter()

        cost = model.cost(state)
        report.initial_cost = cost
        lam = s.lambda_init
        system, gradient = model.linearize(state)
        failures = 0
        rejections = 0
        termination = "max_iters"

        for iteration in range(1, s.max_iters + 1):
            report.iterations = iteration
            tick = time.perf_counter()
            if np.max(np.abs(gradient), initial=0.0) < s.gradient_tol:
                report.iterations = iteration - 1
                termination = "gradient"
                break

            try:
                delta = model.solve(system, lam)
            except np.linalg.LinAlgError:
                failures += 1
                lam *= s.lambda_up
                report.trace.append(IterationRecord(iteration, cost, lam, False, _ms(tick)))
                if failures >= MAX_SOLVE_FAILURES:
                    raise LinearSolveFailure(
                        f"damped normal equations not positive definite after {failures} increases of lambda"
                    )
                continue
            failures = 0

            candidate = model.retract(state, delta)
            new_cost = model.cost(candidate)
            if np.isfinite(new_cost) and new_cost < cost:
                relative = (cost - new_cost) / max(cost, np.finfo(float).tiny)
                state, cost = candidate, new_cost
                lam /= s.lambda_down
                rejections = 0
                report.accepted_steps += 1
                report.trace.append(IterationRecord(iteration, cost, lam, True, _ms(tick)))
                logger.debug("iter %d: cost=%.6e lambda=%.1e accepted", iteration, cost, lam)
                if relative < s.cost_rel_tol:
                    termination = "cost"
                    break
                system, gradient = model.linearize(state)
            else:
                lam *= s.lambda_up
                rejections += 1
                report.trace.append(IterationRecord(iteration, cost, lam, False, _ms(tick)))
                logger.debug("iter %d: cost=%.6e lambda=%.1e rejected", iteration, new_cost, lam)
                if rejections >= MAX_REJECTIONS:
                    termination = "stalled"
                    break

        report.final_cost = cost
        report.termination = termination
        report.wall_time = time.perf_counter() - start
        return state, report


def _ms(tick: float) -> float:
    return (time.perf_counter() - tick) * 1000.0
