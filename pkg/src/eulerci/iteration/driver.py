"""Multi-stage driver: zero state -> stage 1 -> ... -> stage Q."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from ..fields import Grid3
from ..geometry import GammaSolver, build_gamma_solver, default_families
from .energy import EnergyProfile
from .schedule import ParamSchedule
from .state import EulerReynoldsState
from .step import StepConfig, StepResult, run_step, stage_times

logger = logging.getLogger(__name__)


def default_solvers(lambda_bar_sq: int = 5) -> dict[str, GammaSolver]:
    """Certified solvers for the two default frequency families (``even``/``odd``)."""
    return {name: build_gamma_solver(fam, name=name)
            for name, fam in default_families(lambda_bar_sq).items()}


def time_step(schedule: ParamSchedule, refine: int = 1) -> float:
    """Shared lattice spacing ``1 / (8 refine max mu)``."""
    return 1.0 / (8.0 * refine * max(schedule.mu))


@dataclass
class IterationResult:
    states: list[EulerReynoldsState]
    steps: list[StepResult]
    times: list[list[float]]
    dt: float
    notes: list[str] = field(default_factory=list)

    @property
    def rows(self) -> list[dict]:
        return [r for s in self.steps for r in s.rows]


def run_iteration(schedule: ParamSchedule, energy: EnergyProfile, grids: Sequence[int],
                  window: Sequence[float], refine: int = 1,
                  solvers: Mapping[str, GammaSolver] | None = None, lambda_bar_sq: int = 5,
                  config: Mapping | None = None, grid0: int | None = None,
                  on_row: Callable[[dict], None] | None = None,
                  retain_last: Sequence[float] | bool = True) -> IterationResult:
    """Run ``len(grids)`` steps from the zero state.

    ``grids[q]`` is the output grid of step ``q -> q + 1``; ``window`` the
    final time interval.  Each stage keeps only the samples the next stage
    needs; the last stage keeps ``retain_last`` (all samples when ``True``).
    """
    Q = len(grids)
    if Q > schedule.stages:
        raise ValueError(f"schedule has {schedule.stages} stages, {Q} requested")
    dt = time_step(schedule, refine)
    times = stage_times(window, list(schedule.mu[:Q]), dt)
    solvers = dict(solvers) if solvers is not None else default_solvers(lambda_bar_sq)
    state = EulerReynoldsState.zero(Grid3(grid0 or max(16, grids[0] // 2)), times[0])
    states, steps = [state], []
    opts = dict(config or {})
    for q in range(Q):
        cfg = StepConfig(n_out=int(grids[q]), **opts)
        retain = retain_last if q == Q - 1 else times[q + 1]
        logger.info("step %d -> %d: N=%d, %d samples", q, q + 1, grids[q], len(times[q + 1]))
        res = run_step(state, schedule, q, energy, solvers, cfg, times[q + 1],
                       lambda_bar_sq=lambda_bar_sq, retain=retain, on_row=on_row)
        steps.append(res)
        state = res.state
        states.append(state)
    return IterationResult(states, steps, times, dt)


__all__ = ["run_iteration", "IterationResult", "default_solvers", "time_step"]
