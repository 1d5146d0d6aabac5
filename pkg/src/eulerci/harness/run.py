"""Execute a configured run: stages, snapshots, diagnostics CSV and manifest."""

from __future__ import annotations

import logging
from pathlib import Path

from ..fields import Grid3
from ..iteration.driver import default_solvers, run_iteration, time_step
from ..iteration.state import EulerReynoldsState
from ..iteration.step import DIAGNOSTIC_COLUMNS, StepError, stage_times
from .config import RunConfig
from .csvio import write_csv
from .manifest import RunManifest, StageRecord

logger = logging.getLogger(__name__)

DIAGNOSTICS_NAME = "diagnostics.csv"
MANIFEST_NAME = "manifest.json"


class RunFailed(RuntimeError):
    """A fatal numerical error; the manifest on disk records stage and cause."""

    def __init__(self, manifest: RunManifest, message: str):
        super().__init__(message)
        self.manifest = manifest


def _window_times(state: EulerReynoldsState, window) -> list[float]:
    lo, hi = window
    return [float(t) for t in state.times if lo - 1e-12 <= t <= hi + 1e-12]


def _snapshot(state: EulerReynoldsState, out: Path, window) -> list[str]:
    times = _window_times(state, window)
    paths = state.save(out / f"stage{state.q}", times)
    return [p.relative_to(out).as_posix() for p in paths]


def execute(cfg: RunConfig, out_dir: str | Path) -> RunManifest:
    """Run ``cfg.stages`` steps from the zero state and persist the results.

    Raises :class:`RunFailed` (after writing the manifest and any complete
    diagnostics rows) when a step fails.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = cfg.schedule
    mode = cfg.raw.get("snapshots", "all")
    manifest = RunManifest(cfg.hash, schedule.to_dict() if schedule is not None else {})
    Q = cfg.stages
    if Q == 0:
        dt = 1.0 / (8.0 * cfg.refine * max(cfg.raw.get("mu", [1]) or [1]))
        times = stage_times(cfg.window, [], dt)[0]
        zero = EulerReynoldsState.zero(Grid3(cfg.grid0), times)
        rec = StageRecord(0, cfg.grid0, [float(t) for t in times])
        if mode != "none":
            rec.snapshots = _snapshot(zero, out, cfg.window)
        manifest.stages.append(rec)
        manifest.save(out / MANIFEST_NAME)
        return manifest

    rows: list[dict] = []
    error = None
    # the last stage only keeps the window samples that may be written as snapshots
    dt = time_step(schedule, cfg.refine)
    final = stage_times(cfg.window, list(schedule.mu[:Q]), dt)[Q]
    retain = False if mode == "none" else [t for t in final
                                           if cfg.window[0] - 1e-12 <= t <= cfg.window[1] + 1e-12]
    try:
        result = run_iteration(schedule, cfg.energy, cfg.grids, cfg.window, refine=cfg.refine,
                               solvers=default_solvers(cfg.lambda_bar_sq),
                               lambda_bar_sq=cfg.lambda_bar_sq, config=cfg.step_options,
                               grid0=cfg.grid0, on_row=rows.append, retain_last=retain)
    except StepError as exc:
        error = {"stage": exc.stage, "time": exc.time, "cause": f"{type(exc.cause).__name__}: {exc.cause}"}
        result = None
    write_csv(out / DIAGNOSTICS_NAME, rows, DIAGNOSTIC_COLUMNS, kind="step",
              extra_header=[f"config_hash={cfg.hash}"])
    manifest.diagnostics.append(DIAGNOSTICS_NAME)
    if result is None:
        manifest.status = "failed"
        manifest.error = error
        manifest.save(out / MANIFEST_NAME)
        raise RunFailed(manifest, f"stage {error['stage']}: {error['cause']}")
    for q, state in enumerate(result.states):
        rec = StageRecord(q, state.grid.n, [float(t) for t in result.times[q]])
        if q > 0:
            step = result.steps[q - 1]
            rec.constants = step.constants.to_dict()
            rec.flags = list(step.flags)
        if mode == "all" or (mode == "last" and q == Q):
            rec.snapshots = _snapshot(state, out, cfg.window)
        manifest.stages.append(rec)
    manifest.schedule["dt"] = dt
    manifest.save(out / MANIFEST_NAME)
    return manifest


__all__ = ["execute", "RunFailed", "DIAGNOSTICS_NAME", "MANIFEST_NAME"]
