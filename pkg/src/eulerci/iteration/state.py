"""Time-sampled triples ``(v, p, R)`` of the Euler-Reynolds system.

A state stores, for each sample time, a divergence-free velocity ``v``
(``(3, n, n, n)``), a mean-zero pressure ``p`` (``(1, n, n, n)``) and a
symmetric trace-free stress ``R`` (``(6, n, n, n)``).  Samples equal to zero
may be stored as ``None`` so that the initial state costs no memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..fields import (Grid3, PeriodicField, divergence_hat, forward, gradient, inverse,
                      multiply_arrays, pointwise_norm, save_snapshot, sym_trace, SYM_PAIRS,
                      derivative_symbol, c1_norm)

TIME_TOL = 1e-12


@dataclass
class StateSample:
    t: float
    v: np.ndarray | None = None
    p: np.ndarray | None = None
    R: np.ndarray | None = None


@dataclass
class EulerReynoldsState:
    """Samples of ``(v_q, p_q, R_q)`` on one grid at increasing times."""

    q: int
    grid: Grid3
    samples: list[StateSample]
    tolerance: float = float("inf")
    meta: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, grid: Grid3, times: Iterable[float], q: int = 0) -> "EulerReynoldsState":
        return cls(q, grid, [StateSample(float(t)) for t in times], tolerance=0.0)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def index(self, t: float) -> int:
        ts = self.times
        j = int(np.argmin(np.abs(ts - t)))
        if abs(ts[j] - t) > TIME_TOL:
            raise KeyError(f"time {t} is not a sample of stage {self.q}")
        return j

    def has_time(self, t: float) -> bool:
        return bool(np.any(np.abs(self.times - t) <= TIME_TOL))

    def _get(self, t: float, name: str, ncomp: int, n: int | None) -> np.ndarray:
        arr = getattr(self.samples[self.index(t)], name)
        if arr is None:
            m = n or self.grid.n
            return np.zeros((ncomp, m, m, m))
        if n is not None and n != arr.shape[-1]:
            from ..fields import resample
            return resample(arr, n)
        return arr

    def velocity(self, t: float, n: int | None = None) -> np.ndarray:
        return self._get(t, "v", 3, n)

    def pressure(self, t: float, n: int | None = None) -> np.ndarray:
        return self._get(t, "p", 1, n)

    def stress(self, t: float, n: int | None = None) -> np.ndarray:
        return self._get(t, "R", 6, n)

    def is_zero(self, t: float) -> bool:
        s = self.samples[self.index(t)]
        return s.v is None and s.p is None and s.R is None

    def fields(self, t: float) -> tuple[PeriodicField, PeriodicField, PeriodicField]:
        g = self.grid
        return (PeriodicField(g, self.velocity(t), 1, time=t, name=f"v_{self.q}"),
                PeriodicField(g, self.pressure(t), 0, time=t, name=f"p_{self.q}"),
                PeriodicField(g, self.stress(t), 2, time=t, trace_free=True, name=f"R_{self.q}"))

    # -- invariants --------------------------------------------------------
    def invariants(self, t: float) -> dict:
        """Divergence, trace and mean defects of the sample at ``t``."""
        v, p, R = self.fields(t)
        n = self.grid.n
        if self.is_zero(t):
            return {"div_rel": 0.0, "trace_rel": 0.0, "p_mean": 0.0}
        div = inverse(divergence_hat(v.hat, n, 1), n)
        v1 = c1_norm(v)
        rsup = R.sup()
        return {
            "div_rel": float(np.abs(div).max()) / v1 if v1 > 0 else float(np.abs(div).max()),
            "trace_rel": float(np.abs(sym_trace(R.data)).max()) / rsup if rsup > 0 else 0.0,
            "p_mean": float(abs(p.data.mean())),
        }

    def save(self, directory: str | Path, times: Sequence[float]) -> list[Path]:
        """Snapshots of ``v``, ``p`` and ``R`` at the requested sample times."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for t in times:
            j = self.index(t)
            for f in self.fields(self.samples[j].t):
                out.append(save_snapshot(f, directory / f"{f.name}_t{j:04d}.field"))
        return out


def nonlinear_flux(v: np.ndarray) -> np.ndarray:
    """``div(v x v)`` with exactly projected (de-aliased) products."""
    n = v.shape[-1]
    comps = np.stack([multiply_arrays(v[i], v[j]) for i, j in SYM_PAIRS])
    return inverse(divergence_hat(forward(comps), n, 2), n)


def er_residual(v_prev: np.ndarray, v_next: np.ndarray, dt: float, v: np.ndarray,
                p: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Pointwise residual ``d_t v + div(v x v) + grad p - div R`` (centered ``d_t``)."""
    n = v.shape[-1]
    dtv = (v_next - v_prev) / (2.0 * dt)
    ph = forward(p[0])
    grad_p = np.stack([inverse(derivative_symbol(n, a) * ph, n) for a in (1, 2, 3)])
    div_R = inverse(divergence_hat(forward(R), n, 2), n)
    return dtv + nonlinear_flux(v) + grad_p - div_R


def er_residual_norm(state: EulerReynoldsState, t: float) -> float | None:
    """``||residual||_0`` at a sample with both neighbours available, else ``None``."""
    j = state.index(t)
    if j == 0 or j == len(state.samples) - 1:
        return None
    ts = state.times
    dt_a, dt_b = ts[j] - ts[j - 1], ts[j + 1] - ts[j]
    if abs(dt_a - dt_b) > 1e-12:
        raise ValueError("centered differences need uniform sample spacing")
    r = er_residual(state.velocity(ts[j - 1]), state.velocity(ts[j + 1]), dt_a,
                    state.velocity(t), state.pressure(t), state.stress(t))
    return float(pointwise_norm(r, 1).max())


__all__ = ["EulerReynoldsState", "StateSample", "er_residual", "er_residual_norm", "nonlinear_flux"]
