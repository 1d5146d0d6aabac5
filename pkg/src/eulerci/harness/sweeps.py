"""Parameter sweeps with fitted decay orders (``eulerci sweep``)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .. import calculus as calc
from .. import fields as fl
from .csvio import render_csv

CHECKS = ("cet", "stationary-phase", "br-commutator", "corrector-ratio")

DEFAULT_RANGES = {
    "cet": [1 / 8, 1 / 16, 1 / 32, 1 / 64],
    "stationary-phase": [2, 4, 8, 16],
    "br-commutator": [2, 4, 8, 16],
    "corrector-ratio": [8, 12, 16],
}

SWEEP_UNITS = {
    "scale": "sweep parameter (ell, lambda or lambda_{q+1})",
    "value": "measured norm",
    "fitted_order": "least-squares log-log order of the whole sweep",
}


class SweepError(ValueError):
    """Invalid sweep request (unknown check or empty range)."""


@dataclass
class SweepResult:
    check: str
    scales: list[float]
    values: list[float]
    order: float
    threshold: float | None = None
    truncated: bool = False
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool | None:
        if self.threshold is None:
            return None
        return bool(self.order >= self.threshold)

    def to_csv(self) -> str:
        head = [f"check={self.check}", f"fitted_order={self.order!r}"]
        if self.threshold is not None:
            head.append(f"threshold={self.threshold!r} passed={str(self.passed).lower()}")
        head.append(f"truncated={str(self.truncated).lower()}")
        if self.truncated:
            head.append("WARNING: sweep truncated at the resolved band")
        for k in sorted(self.notes):
            head.append(f"{k}={self.notes[k]}")
        rows = [{"scale": s, "value": v, "fitted_order": self.order}
                for s, v in zip(self.scales, self.values)]
        return render_csv(rows, ["scale", "value", "fitted_order"], kind=f"sweep-{self.check}",
                          extra_header=head, units=SWEEP_UNITS)


def parse_range(text: str | Sequence[float] | None, check: str) -> list[float]:
    """``"1/8,1/16"`` or a list of numbers; ``None`` selects the default range."""
    if text is None:
        return list(DEFAULT_RANGES[check])
    if isinstance(text, str):
        items = [s.strip() for s in text.split(",") if s.strip()]
        try:
            vals = [float(Fraction(s)) for s in items]
        except (ValueError, ZeroDivisionError) as exc:
            raise SweepError(f"cannot parse range {text!r}: {exc}") from None
    else:
        vals = [float(x) for x in text]
    if not vals:
        raise SweepError("empty sweep range")
    if any(not math.isfinite(v) or v <= 0 for v in vals):
        raise SweepError("sweep values must be positive and finite")
    return vals


def _from_report(check: str, rep: calc.DecayReport, threshold, truncated=False, notes=None):
    return SweepResult(check, rep.scales, rep.values, rep.order, threshold,
                       truncated or rep.truncated, notes or {})


def sweep_cet(ells: Sequence[float], grid: int = 64, seed: int = 0, band: int = 4) -> SweepResult:
    g = fl.Grid3(grid)
    rng = np.random.default_rng(seed)
    f = fl.random_band_limited(g, 0, band, rng)
    h = fl.random_band_limited(g, 0, band, rng)
    if any(ell >= math.pi for ell in ells):
        raise SweepError("mollifier scales must be below pi")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", calc.UnderResolvedWarning)
        rep = calc.cet_sweep(f, h, ells, r=0)
    under = any(ell < g.spacing for ell in ells)
    return _from_report("cet", rep, 1.9, truncated=False,
                        notes={"grid": grid, "band": band, "seed": seed,
                               "kernel_below_grid_spacing": str(under).lower()})


def sweep_stationary_phase(lams: Sequence[float], m: int = 1, grid: int = 64) -> SweepResult:
    g = fl.Grid3(grid)
    x1 = g.mesh()[0]
    a = fl.PeriodicField(g, np.exp(np.sin(x1))[np.newaxis], 0)
    rep = calc.stationary_phase_integrals(a, (1, 0, 0), [int(x) for x in lams])
    return _from_report("stationary-phase", rep, m - 0.1,
                        notes={"grid": grid, "m": m, "amplitude": "exp(sin x1)", "k": "(1,0,0)"})


def sweep_br_commutator(lams: Sequence[float], alpha: float = 0.25, grid: int = 64) -> SweepResult:
    g = fl.Grid3(grid)
    x2 = g.mesh()[1]
    a = fl.PeriodicField(g, np.stack([np.ones(g.shape), np.zeros(g.shape), np.zeros(g.shape)]), 1)
    b = fl.PeriodicField(g, np.sin(x2)[np.newaxis], 0)
    rep = calc.br_commutator_decay(b, a, (1, 0, 0), [int(x) for x in lams], alpha=alpha)
    return _from_report("br-commutator", rep, 2 - alpha - 0.1,
                        notes={"grid": grid, "alpha": alpha, "a": "e1", "b": "sin x2"})


def corrector_grid(lam: int) -> int:
    """Stage-2 grid for ``lambda_2 = lam``: eight points per output wavelength."""
    return fl.friendly_size(8 * int(lam))


def sweep_corrector_ratio(lams: Sequence[float], grid1: int = 64, t: float = 0.5,
                          window_pad: bool = True) -> SweepResult:
    """``||w_c||_0/||w_o||_0`` at stage 2 against ``lambda_2`` (``lambda_1 = 6``, ``mu = (8, 16)``).

    The stage-1 state is computed once; each sweep point runs only the
    second step, on a grid of eight points per ``lambda_2`` wavelength.
    """
    from ..iteration.driver import default_solvers, time_step
    from ..iteration.energy import EnergyProfile
    from ..iteration.schedule import ParamSchedule
    from ..iteration.state import EulerReynoldsState
    from ..iteration.step import StepConfig, run_step, stage_times

    lams = [int(x) for x in lams]
    energy = EnergyProfile.constant(1.0)
    solvers = default_solvers(5)
    base = ParamSchedule.relaxed([1.0, 0.25], [6, lams[0]], [8, 16])
    dt = time_step(base)
    times = stage_times((t, t), [8, 16], dt)
    zero = EulerReynoldsState.zero(fl.Grid3(max(16, grid1 // 2)), times[0])
    stage1 = run_step(zero, base, 0, energy, solvers, StepConfig(grid1), times[1],
                      retain=times[2]).state
    values = []
    for lam in lams:
        sched = ParamSchedule.relaxed([1.0, 0.25], [6, lam], [8, 16])
        res = run_step(stage1, sched, 1, energy, solvers, StepConfig(corrector_grid(lam)),
                       times[2], retain=False)
        row = min(res.rows, key=lambda r: abs(r["t"] - t))
        values.append(row["corrector_ratio"])
    slope = calc.fitted_slope(lams, values) if len(lams) > 1 else math.nan
    ratios = [b / a for a, b in zip(values[:-1], values[1:])]
    monotone = all(r <= 1.05 for r in ratios)
    return SweepResult("corrector-ratio", [float(x) for x in lams], values, -slope, None, False,
                       {"t": t, "grid1": grid1, "monotone_within_5pct": str(monotone).lower(),
                        "grids2": " ".join(str(corrector_grid(x)) for x in lams)})


def run_sweep(check: str, values: Sequence[float], grid: int | None = None, seed: int = 0,
              m: int = 1) -> SweepResult:
    if check not in CHECKS:
        raise SweepError(f"unknown check {check!r}; choose from {', '.join(CHECKS)}")
    if not values:
        raise SweepError("empty sweep range")
    try:
        if check == "cet":
            return sweep_cet(values, grid or 64, seed)
        if check == "stationary-phase":
            return sweep_stationary_phase(values, m, grid or 64)
        if check == "br-commutator":
            return sweep_br_commutator(values, grid=grid or 64)
        return sweep_corrector_ratio(values, grid or 64)
    except SweepError:
        raise
    except ValueError as exc:  # unresolved sweep points, bad grid sizes
        raise SweepError(str(exc)) from exc


__all__ = ["CHECKS", "DEFAULT_RANGES", "SweepError", "SweepResult", "parse_range", "run_sweep",
           "sweep_cet", "sweep_stationary_phase", "sweep_br_commutator", "sweep_corrector_ratio",
           "corrector_grid"]
