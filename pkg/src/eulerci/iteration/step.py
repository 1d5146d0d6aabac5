"""One inductive step ``(v_q, p_q, R_q) -> (v_{q+1}, p_{q+1}, R_{q+1})``.

Pipeline per step:

1. mollify ``v`` and ``R`` in space;
2. energy gaps ``rho_l`` and transported stresses ``R_{ell,l}`` for every
   cutoff anchor ``l / mu``;
3. amplitudes ``a_kl = sqrt(rho_l) gamma_k(Id - R_{ell,l} / rho_l)``, phases
   ``lambda k . Phi_l`` and the perturbation ``w = w_o + w_c``;
4. the new pressure and the six stress components ``R^0 .. R^5``.

Fields that vary slowly in space (``v_ell``, the flow displacements,
transported stresses and amplitudes) live on a *slow* grid and are spectrally
upsampled to the output grid, where the oscillatory factors are evaluated
pointwise.  Products entering spectral operators are formed on a grid large
enough that the output band is reproduced exactly (3/2 rule).

Time samples are processed in increasing order with a sliding window of three
samples, which is all the centered time differences need.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ..beltrami import BeltramiMode, build_modes
from ..calculus import Mollifier, inverse_divergence_array, mollify_array
from ..fields import (AliasingError, Grid3, SYM_PAIRS, PeriodicField, c1_norm, derivative_symbol,
                      divergence_hat, forward, high_band_fraction, inverse, multiply_arrays,
                      pointwise_norm, product_grid, resample, resample_hat, spectral_band,
                      sym_opnorm, sym_trace)
from ..geometry import GammaSolver
from ..transport import FlowMap, TimeSeries, default_step, eulerian_flow_maps, solve_flow_map, \
    transported_stress
from .cutoffs import CutoffFamily, SUPPORT
from .energy import EnergyProfile
from .schedule import ParamSchedule
from .state import EulerReynoldsState, StateSample, nonlinear_flux

logger = logging.getLogger(__name__)

TORUS_VOLUME = (2.0 * np.pi) ** 3
IDENTITY6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


class EnergyGapError(ValueError):
    """``rho_l <= 0``: the state violates the energy hypothesis."""


class StepError(RuntimeError):
    """Fatal error inside a step, with stage and time context."""

    def __init__(self, stage: int, time: float | None, cause: Exception):
        self.stage, self.time, self.cause = stage, time, cause
        where = f"stage {stage}" + (f", t={time:.6g}" if time is not None else "")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def _sup(a: np.ndarray, rank: int) -> float:
    return float(pointwise_norm(a, rank).max()) if a.size else 0.0


def _cross_const(c: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise ``c x b`` for a field ``c`` ``(3, ...)`` and a constant vector ``b``."""
    return np.stack([c[1] * b[2] - c[2] * b[1], c[2] * b[0] - c[0] * b[2], c[0] * b[1] - c[1] * b[0]])


def _jacobian(data: np.ndarray) -> np.ndarray:
    """``J[i, j] = d data_i / d x_j`` for ``(3, n, n, n)`` data."""
    n = data.shape[-1]
    h = forward(data)
    return np.stack([np.stack([inverse(derivative_symbol(n, j + 1) * h[i], n) for j in range(3)])
                     for i in range(3)])


def _up(ah: np.ndarray, n_from: int, n_to: int) -> np.ndarray:
    return inverse(resample_hat(ah, n_from, n_to) if n_from != n_to else ah, n_to)


def sym_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetric ``a x b + b x a`` in 6-component storage (pointwise)."""
    return np.stack([a[i] * b[j] + a[j] * b[i] for i, j in SYM_PAIRS])


class ProductEngine:
    """Exactly projected products of fields sharing one output grid.

    Operands are upsampled once to a grid of size ``m`` chosen from the
    largest operand band, multiplied there and projected back.
    """

    def __init__(self, n: int, band: int):
        self.n = n
        self.m = product_grid(n, band, band)
        self._cache: dict[str, np.ndarray] = {}

    def add(self, name: str, data: np.ndarray):
        self._cache[name] = data if self.m == self.n else resample(data, self.m)

    def has(self, name: str) -> bool:
        return name in self._cache

    def _project(self, x: np.ndarray) -> np.ndarray:
        if self.m == self.n:
            return x
        return inverse(resample_hat(forward(x), self.m, self.n), self.n)

    def prod(self, a: str, i: int, b: str, j: int) -> np.ndarray:
        return self._project(self._cache[a][i] * self._cache[b][j])

    def dot(self, a: str, b: str) -> np.ndarray:
        A, B = self._cache[a], self._cache[b]
        return self._project(A[0] * B[0] + A[1] * B[1] + A[2] * B[2])

    def sym_outer(self, a: str, b: str) -> np.ndarray:
        """``a x b + b x a`` (6 components)."""
        A, B = self._cache[a], self._cache[b]
        return np.stack([self._project(A[i] * B[j] + A[j] * B[i]) for i, j in SYM_PAIRS])

    def contract(self, a: str, grad: str) -> np.ndarray:
        """``(a . grad) f`` for ``grad`` stored as ``(3*ncomp)`` with ``[j*ncomp + c] = d_j f_c``."""
        A, G = self._cache[a], self._cache[grad]
        nc = G.shape[0] // 3
        return np.stack([self._project(sum(A[j] * G[j * nc + c] for j in range(3)))
                         for c in range(nc)])

    def drop(self, *names: str):
        for nm in names:
            self._cache.pop(nm, None)


def field_band(data: np.ndarray, rel_tol: float = 1e-13) -> int:
    return spectral_band(forward(data), data.shape[-1], True, rel_tol) if np.any(data) else 0


# ---------------------------------------------------------------------------
# Energy gap and constants
# ---------------------------------------------------------------------------


def energy_gap(e: EnergyProfile, v: np.ndarray | None, t: float, delta_q2: float) -> float:
    """``rho = (e(t)(1 - delta_{q+2}) - int |v|^2) / (3 (2 pi)^3)`` by grid quadrature."""
    energy = 0.0 if v is None else TORUS_VOLUME * float(np.mean(np.sum(v * v, axis=0)))
    rho = (e(t) * (1.0 - delta_q2) - energy) / (3.0 * TORUS_VOLUME)
    if not rho > 0:
        raise EnergyGapError(f"energy gap rho = {rho:.4g} <= 0 at t = {t:.6g}")
    return rho


@dataclass(frozen=True)
class StepConstants:
    """``C0`` bracketing the energy gaps, ``eta`` and ``M``."""

    C0: float
    C0_bracket: float
    eta: float
    M: float
    r0: float
    n_frequencies: int

    def to_dict(self) -> dict:
        return {"C0": self.C0, "C0_bracket": self.C0_bracket, "eta": self.eta, "M": self.M,
                "r0": self.r0, "n_frequencies": self.n_frequencies}


def constants(e: EnergyProfile, solvers: Sequence[GammaSolver] | GammaSolver, n_frequencies: int,
              delta_ratio: float = 0.5, rhos: Sequence[float] = (), delta_q1: float = 1.0) -> StepConstants:
    """``C0``, ``eta = r0 min(e) / (4 C0)`` and ``M = 2 C0 |Lambda| max(e)``.

    ``C0`` is the smallest constant for which the admissible gap range
    ``e (3/4 - r) delta / (3 (2 pi)^3) <= rho <= e (5/4 - r) delta / (3 (2 pi)^3)``
    (``r = delta_{q+2}/delta_{q+1}``) sits inside
    ``[min(e) delta / C0, C0 max(e) delta]``; measured gaps ``rhos`` may enlarge it.
    """
    if isinstance(solvers, GammaSolver):
        solvers = [solvers]
    if not 0 <= delta_ratio < 0.75:
        raise ValueError("delta_{q+2}/delta_{q+1} must lie in [0, 3/4)")
    vol3 = 3.0 * TORUS_VOLUME
    c_lower = vol3 / (0.75 - delta_ratio)
    c_upper = (1.25 - delta_ratio) / vol3
    bracket = max(c_lower, c_upper)
    c0 = bracket
    for rho in rhos:
        c0 = max(c0, rho / (e.max() * delta_q1), e.min() * delta_q1 / rho)
    r0 = min(s.r0 for s in solvers)
    return StepConstants(C0=c0, C0_bracket=bracket, eta=r0 * e.min() / (4.0 * c0),
                         M=2.0 * c0 * n_frequencies * e.max(), r0=r0, n_frequencies=n_frequencies)


# ---------------------------------------------------------------------------
# Step setup
# ---------------------------------------------------------------------------


@dataclass
class StepConfig:
    """Numerical knobs of a step (grids, flow solver, checks)."""

    n_out: int
    n_slow: int | None = None
    flow_method: str = "eulerian"
    alias_tol: float = 1e-6
    relaxed_floor: bool = True
    doublesum: bool | None = None
    oscillation: bool = False
    keep_modes: bool | None = None

    def resolved(self, n_in: int) -> "StepConfig":
        small = self.n_out <= 64
        return StepConfig(self.n_out, self.n_slow or n_in, self.flow_method, self.alias_tol,
                          self.relaxed_floor,
                          small if self.doublesum is None else self.doublesum,
                          self.oscillation,
                          (small if self.keep_modes is None else self.keep_modes)
                          or self.oscillation or bool(self.doublesum))


@dataclass
class Anchor:
    """Data attached to one cutoff index ``l``: gap, stress and flow maps."""

    l: int
    t0: float
    rho: float
    rho_raw: float
    floored: bool
    R_ell: np.ndarray | None  # (6, ns, ns, ns) or None when zero
    flows: dict[float, FlowMap] = field(default_factory=dict)
    transported: dict[float, np.ndarray] = field(default_factory=dict)


class StepContext:
    """Everything the per-time assembly needs for one step."""

    def __init__(self, state: EulerReynoldsState, schedule: ParamSchedule, q: int,
                 energy: EnergyProfile, solvers: Mapping[str, GammaSolver],
                 lambda_bar_sq: int, cfg: StepConfig, constants_: StepConstants | None = None):
        self.state = state
        self.schedule = schedule
        self.q = q
        self.params = schedule.step(q)
        self.energy = energy
        self.solvers = dict(solvers)
        self.lambda_bar_sq = lambda_bar_sq
        self.cfg = cfg.resolved(state.grid.n)
        self.n_in = state.grid.n
        self.n_out = self.cfg.n_out
        self.n_slow = self.cfg.n_slow
        self.lam = int(self.params["lambda_q1"]) if math.isfinite(self.params["lambda_q1"]) else None
        self.modes = {name: build_modes(lambda_bar_sq, s.frequencies) for name, s in self.solvers.items()}
        kmax = max(max(abs(c) for c in m.k) for ms in self.modes.values() for m in ms)
        if self.lam is None or self.lam * kmax >= self.n_out // 2:
            raise AliasingError(f"frequency lambda_{q + 1} * |k|_inf = "
                                f"{self.params['lambda_q1']} * {kmax} is not below the Nyquist "
                                f"limit {self.n_out // 2} of the N={self.n_out} grid; "
                                f"increase the grid")
        self.cutoffs = CutoffFamily(int(self.params["mu"]))
        self.mollifier = Mollifier(float(self.params["ell"]))
        self.checks = schedule.assert_conditions(q)
        self.r0 = min(s.r0 for s in self.solvers.values())
        self.n_frequencies = sum(len(s.frequencies) for s in self.solvers.values())
        self._anchors: dict[int, Anchor] = {}
        self._vell_slow: dict[float, np.ndarray] = {}
        self._constants = constants_
        self.flags: list[str] = []
        times = state.times
        self.dt = float(times[1] - times[0]) if len(times) > 1 else 1.0

    # -- parity rule -------------------------------------------------------
    def solver_for(self, l: int) -> GammaSolver:
        return self.solvers["even" if l % 2 == 0 else "odd"]

    def modes_for(self, l: int) -> list[BeltramiMode]:
        return self.modes["even" if l % 2 == 0 else "odd"]

    # -- mollified inputs --------------------------------------------------
    def v_ell_slow(self, t: float) -> np.ndarray | None:
        if self.state.is_zero(t):
            return None
        if t not in self._vell_slow:
            v = mollify_array(self.state.velocity(t), self.mollifier)
            self._vell_slow[t] = resample(v, self.n_slow) if self.n_slow != self.n_in else v
        return self._vell_slow[t]

    def anchor(self, l: int) -> Anchor:
        if l not in self._anchors:
            t0 = l / self.cutoffs.mu
            if not self.state.has_time(t0):
                raise ValueError(f"anchor time {t0} is not among the state samples")
            v = None if self.state.is_zero(t0) else self.state.velocity(t0)
            rho_raw = energy_gap(self.energy, v, t0, self.params["delta_q2"])
            R_ell = None
            if not self.state.is_zero(t0) and np.any(self.state.stress(t0)):
                R = mollify_array(self.state.stress(t0), self.mollifier)
                R_ell = resample(R, self.n_slow) if self.n_slow != self.n_in else R
            rho, floored = rho_raw, False
            if self.schedule.mode == "relaxed" and self.cfg.relaxed_floor and R_ell is not None:
                floor = 2.0 * float(sym_opnorm(R_ell).max()) / self.r0
                if floor > rho_raw:
                    rho, floored = floor, True
                    self.flags.append(f"rho_{l} raised from {rho_raw:.4g} to {rho:.4g}")
            self._anchors[l] = Anchor(l, t0, rho, rho_raw, floored, R_ell)
        return self._anchors[l]

    def release(self, t: float):
        """Drop anchor data no longer reachable from times ``>= t``."""
        for l in list(self._anchors):
            if self.cutoffs.mu * t - l >= SUPPORT:
                del self._anchors[l]
        for s in list(self._vell_slow):
            if s < t - 1.0 / self.cutoffs.mu - 2 * self.dt:
                del self._vell_slow[s]

    def _velocity_series(self, ta: float, tb: float) -> TimeSeries | None:
        ts = [s for s in self.state.times if ta - 1e-12 <= s <= tb + 1e-12]
        data = [self.v_ell_slow(s) for s in ts]
        if all(d is None for d in data):
            return None
        ns = self.n_slow
        data = [np.zeros((3, ns, ns, ns)) if d is None else d for d in data]
        return TimeSeries(ts, data)

    def flow(self, l: int, t: float, out_times: Sequence[float]) -> FlowMap:
        anc = self.anchor(l)
        if t not in anc.flows:
            targets = [s for s in out_times if abs(self.cutoffs.mu * s - l) < SUPPORT
                       and s not in anc.flows]
            if t not in targets:
                targets.append(t)
            lo, hi = min(targets + [anc.t0]), max(targets + [anc.t0])
            series = self._velocity_series(lo, hi)
            ns = self.n_slow
            if series is None:
                for s in targets:
                    anc.flows[s] = FlowMap(anc.t0, s, np.zeros((3, ns, ns, ns)), method="identity")
            else:
                mu = self.cutoffs.mu
                h = default_step(series, mu, lo, hi)
                if self.cfg.flow_method == "eulerian":
                    anc.flows.update(eulerian_flow_maps(series, anc.t0, targets, h))
                else:
                    for s in targets:
                        anc.flows[s] = solve_flow_map(series, l, mu, s, method=self.cfg.flow_method,
                                                      h_max=h)
            for s in targets:
                self.flags.extend(anc.flows[s].flags)
        return anc.flows[t]

    def transported_stress(self, l: int, t: float, out_times: Sequence[float]) -> np.ndarray | None:
        anc = self.anchor(l)
        if anc.R_ell is None:
            return None
        if t not in anc.transported:
            fl = self.flow(l, t, out_times)
            anc.transported[t] = transported_stress(anc.R_ell, fl, atol=1e-13 * anc.rho).data
        return anc.transported[t]

    def step_constants(self) -> StepConstants:
        if self._constants is None:
            rhos = [self.anchor(l).rho for l in self.cutoffs.indices
                    if self.state.has_time(l / self.cutoffs.mu)]
            self._constants = constants(self.energy, list(self.solvers.values()), self.n_frequencies,
                                        self.params["delta_q2"] / self.params["delta_q1"], rhos,
                                        self.params["delta_q1"])
        return self._constants


# ---------------------------------------------------------------------------
# Perturbation
# ---------------------------------------------------------------------------


@dataclass
class ModeTerm:
    """One complex Beltrami term ``chi_l a_kl B_k exp(i lambda k . Phi_l)`` (``+k`` member)."""

    l: int
    k: tuple[int, int, int]
    W: np.ndarray  # complex (3, n, n, n)


@dataclass
class Perturbation:
    t: float
    w_o: np.ndarray
    w_c: np.ndarray
    w: np.ndarray
    dtw: np.ndarray
    S: np.ndarray  # sum_l chi_l^2 transported stresses (6 comps)
    chi2_rho: float
    chi2_sum: float
    active: list[int]
    rho: dict[int, float]
    amplitudes: dict[tuple[tuple[int, int, int], int], np.ndarray]
    flows: dict[int, FlowMap]
    v: np.ndarray
    v_ell: np.ndarray
    form_gap: float  # sup of w_c minus its pointwise (non-curl) evaluation
    alias_fraction: float
    modes: list[ModeTerm] = field(default_factory=list)

    @property
    def ebar(self) -> float:
        """``3 (2 pi)^3 sum_l chi_l^2 rho_l``."""
        return 3.0 * TORUS_VOLUME * self.chi2_rho


def perturbation(ctx: StepContext, t: float, out_times: Sequence[float] = ()) -> Perturbation:
    """Assemble ``w_o``, ``w_c`` and the analytic ``D_t w`` at time ``t``."""
    n, ns, lam = ctx.n_out, ctx.n_slow, ctx.lam
    grid = Grid3(n)
    out_times = list(out_times) or [t]
    v = ctx.state.velocity(t, n)
    v_zero = ctx.state.is_zero(t)
    v_ell = np.zeros_like(v) if v_zero else mollify_array(v, ctx.mollifier)
    Dv = None if v_zero else _jacobian(v_ell)
    x1, x2, x3 = grid.coords()
    shape = (3,) + grid.shape
    w_o = np.zeros(shape)
    w_cp = np.zeros(shape)
    Z = np.zeros(shape)
    dtw = np.zeros(shape)
    S = np.zeros((6,) + grid.shape)
    chi2_rho = chi2_sum = 0.0
    amps, flows, rho, terms = {}, {}, {}, []
    active = ctx.cutoffs.active(t)
    for l in active:
        chi = float(ctx.cutoffs.value(l, t))
        dchi = float(ctx.cutoffs.derivative(l, t))
        anc = ctx.anchor(l)
        rho[l] = anc.rho
        chi2_rho += chi * chi * anc.rho
        chi2_sum += chi * chi
        fl = ctx.flow(l, t, out_times)
        flows[l] = fl
        Rt = ctx.transported_stress(l, t, out_times)
        solver = ctx.solver_for(l)
        if Rt is None:
            gam = solver.gamma_pairs(IDENTITY6)
            a_const = math.sqrt(anc.rho) * gam
            a_hat = None
        else:
            R6 = IDENTITY6.reshape((6, 1, 1, 1)) - Rt / anc.rho
            gam = solver.gamma_pairs(R6)
            a_slow = math.sqrt(anc.rho) * gam
            a_hat = forward(a_slow)
            S += chi * chi * _up(forward(Rt), ns, n)
        ph = None if fl.is_identity else forward(fl.displacement)
        sym = [derivative_symbol(ns, j + 1) for j in range(3)]
        by_k = {m.k: m for m in ctx.modes_for(l)}
        for p, kp in enumerate(solver.pairs):
            mode = by_k[kp]
            kv = mode.kvec
            B = mode.B
            kxB = np.cross(kv, B) / float(kv @ kv)
            if a_hat is None:
                a = np.full(grid.shape, float(a_const[p]))
                grad_a = None
            else:
                a = _up(a_hat[p], ns, n)
                grad_a = np.stack([_up(sym[j] * a_hat[p], ns, n) for j in range(3)])
            if ctx.cfg.keep_modes:
                amps[(kp, l)] = a
                amps[(tuple(-c for c in kp), l)] = a
            theta = lam * (kv[0] * x1 + kv[1] * x2 + kv[2] * x3)
            dk = None
            if ph is not None:
                theta = theta + lam * _up(kv[0] * ph[0] + kv[1] * ph[1] + kv[2] * ph[2], ns, n)
                kpsi = kv[0] * ph[0] + kv[1] * ph[1] + kv[2] * ph[2]
                dk = np.stack([_up(sym[j] * kpsi, ns, n) for j in range(3)])  # (DPhi^T - Id) k
                del kpsi
            E = np.exp(1j * theta)
            del theta
            # corrector vector  (i/lam) grad a - a (grad(k . Phi) - k)  =  cr + i ci,
            # with grad(k . Phi) = DPhi^T k for the Jacobian [i, j] = d_j Phi_i
            cr = None if dk is None else -a * dk
            ci = None if grad_a is None else grad_a / lam
            # D_t of it:  a Dv^T DPhi^T k - (i/lam) Dv^T grad a  =  dr + i di
            dr = di = None
            if Dv is not None:
                gk = kv.reshape(3, 1, 1, 1) + (dk if dk is not None else 0.0)
                dr = a * np.einsum("ji...,j...->i...", Dv, gk)
                del gk
                if grad_a is not None:
                    di = -np.einsum("ji...,j...->i...", Dv, grad_a) / lam
            cross_r = None if cr is None else _cross_const(cr, kxB)
            cross_i = None if ci is None else _cross_const(ci, kxB)
            dcross_r = None if dr is None else _cross_const(dr, kxB)
            dcross_i = None if di is None else _cross_const(di, kxB)
            del cr, ci, dr, di
            W = np.empty(shape, dtype=complex) if ctx.cfg.keep_modes else None
            for i in range(3):
                aBE = (B[i] * a) * E
                corrE = 0.0
                if cross_r is not None:
                    corrE = corrE + cross_r[i]
                if cross_i is not None:
                    corrE = corrE + 1j * cross_i[i]
                corrE = corrE * E
                w_o[i] += 2.0 * chi * aBE.real
                w_cp[i] += 2.0 * chi * np.real(corrE)
                Z[i] += (2.0 * chi / lam) * a * np.real(1j * kxB[i] * E)
                dt_i = dchi * (aBE + corrE)
                if dcross_r is not None:
                    dterm = dcross_r[i] + (1j * dcross_i[i] if dcross_i is not None else 0.0)
                    dt_i = dt_i + chi * dterm * E
                dtw[i] += 2.0 * np.real(dt_i)
                if W is not None:
                    W[i] = chi * aBE
                del aBE, corrE, dt_i
            if W is not None:
                terms.append(ModeTerm(l, kp, W))
                terms.append(ModeTerm(l, tuple(-c for c in kp), np.conj(W)))
            del E, cross_r, cross_i, dcross_r, dcross_i, grad_a, dk
    # curl form: w = curl Z, divergence free on the grid
    zh = forward(Z)
    d = [derivative_symbol(n, a) for a in (1, 2, 3)]
    wh = np.stack([d[1] * zh[2] - d[2] * zh[1], d[2] * zh[0] - d[0] * zh[2], d[0] * zh[1] - d[1] * zh[0]])
    w = inverse(wh, n)
    # w and the pointwise-evaluated D_t w (which carries the band of v_ell on top
    # of the oscillation) must both be resolved, otherwise R^0 inherits aliases
    frac = max(high_band_fraction(wh, n), high_band_fraction(forward(dtw), n))
    del wh, zh
    if frac > ctx.cfg.alias_tol:
        raise AliasingError(f"perturbation or its material derivative has energy fraction "
                            f"{frac:.3g} above 0.9 x Nyquist on the N={n} grid (tolerance "
                            f"{ctx.cfg.alias_tol:g}); increase the grid")
    w_c = w - w_o
    w_cp -= w_c
    form_gap = _sup(w_cp, 1)
    del w_cp, Z
    return Perturbation(t=t, w_o=w_o, w_c=w_c, w=w, dtw=dtw, S=S, chi2_rho=chi2_rho,
                        chi2_sum=chi2_sum, active=active, rho=rho, amplitudes=amps, flows=flows,
                        v=v, v_ell=v_ell, form_gap=form_gap, alias_fraction=frac, modes=terms)


def doublesum_check(pert: Perturbation) -> float:
    """``|| w_o x w_o - sum chi^2 R_{ell,l} - sum_{k != -k'} chi chi' w_kl x w_k'l' ||_0``.

    The off-diagonal sum is assembled term by term from the stored modes.
    """
    if not pert.modes and not np.any(pert.w_o):
        return 0.0
    if not pert.modes:
        raise ValueError("mode terms were not kept; enable keep_modes")
    shape = pert.w_o.shape[1:]
    off = np.zeros((6,) + shape, dtype=complex)
    index = {(m.k, m.l): m for m in pert.modes}
    for m in pert.modes:
        partner = index.get((tuple(-c for c in m.k), m.l))
        rest = pert.w_o - (partner.W if partner is not None else 0.0)
        off += np.stack([m.W[i] * rest[j] for i, j in SYM_PAIRS])
    lhs = np.stack([pert.w_o[i] * pert.w_o[j] for i, j in SYM_PAIRS])
    R = pert.chi2_rho * IDENTITY6.reshape((6,) + (1,) * 3) - pert.S
    res = lhs - R - off.real
    return float(np.max(np.abs(np.concatenate([sym_opnorm(res).ravel(), np.abs(off.imag).ravel()]))))


def oscillation_check(pert: Perturbation, lam: int) -> dict:
    """Size of the term that the symmetric ``B_k`` identity cancels in ``R^1``.

    ``II = i lam sum_{k+k' != 0} (W x W' - (W . W')/2 Id)(k + k')`` is
    assembled pair by pair; ``scale`` is the same sum with absolute values.
    """
    if not pert.modes:
        return {"II_sup": 0.0, "scale": 0.0, "relative": 0.0}
    shape = pert.w_o.shape[1:]
    II = np.zeros((3,) + shape, dtype=complex)
    scale = np.zeros(shape)
    for m in pert.modes:
        for m2 in pert.modes:
            s = np.asarray(m.k, float) + np.asarray(m2.k, float)
            if not np.any(s):
                continue
            Wd = m2.W[0] * s[0] + m2.W[1] * s[1] + m2.W[2] * s[2]
            dotWW = m.W[0] * m2.W[0] + m.W[1] * m2.W[1] + m.W[2] * m2.W[2]
            II += 1j * lam * (m.W * Wd - 0.5 * dotWW * s.reshape(3, 1, 1, 1))
            scale += lam * np.linalg.norm(s) * (pointwise_norm(m.W, 1) * pointwise_norm(m2.W, 1))
    sup = float(pointwise_norm(II, 1).max())
    sc = float(scale.max())
    return {"II_sup": sup, "scale": sc, "relative": sup / sc if sc > 0 else 0.0,
            "II": II.real}


# ---------------------------------------------------------------------------
# New pressure and stress
# ---------------------------------------------------------------------------


@dataclass
class StressParts:
    R: list[np.ndarray] | None  # R^0 .. R^5 (None unless kept)
    sups: list[float]  # sup operator norms of R^0 .. R^5
    total: np.ndarray
    p1: np.ndarray
    p_shift: float
    wo2: np.ndarray  # projected |w_o|^2
    engine_grid: int


def _engine(arrays: Mapping[str, np.ndarray], bands: Mapping[str, int]) -> ProductEngine:
    n = next(iter(arrays.values())).shape[-1]
    eng = ProductEngine(n, max(bands[k] for k in arrays))
    for k, a in arrays.items():
        eng.add(k, a)
    return eng


def new_pressure(p: np.ndarray, w_o: np.ndarray, w_c: np.ndarray, v: np.ndarray,
                 v_ell: np.ndarray, engine: ProductEngine | None = None) -> tuple[np.ndarray, float]:
    """``p - |w_o|^2/2 - |w_c|^2/3 - 2<w_o, w_c>/3 - 2<v - v_ell, w>/3``, re-centred to mean zero."""
    if engine is None:
        arrays = {"wo": w_o, "wc": w_c, "w": w_o + w_c, "u": v - v_ell}
        engine = _engine(arrays, {k: field_band(a) for k, a in arrays.items()})
    p1 = (p[0] - 0.5 * engine.dot("wo", "wo") - engine.dot("wc", "wc") / 3.0
          - 2.0 * engine.dot("wo", "wc") / 3.0 - 2.0 * engine.dot("u", "w") / 3.0)
    shift = float(p1.mean())
    return (p1 - shift)[np.newaxis], shift


def new_stress(ctx: StepContext, pert: Perturbation, R: np.ndarray, p: np.ndarray,
               keep_parts: bool = True) -> StressParts:
    """``R^0 .. R^5``, their sum and the new pressure at ``pert.t``.

    Products are formed in groups so that only a few upsampled operands are
    resident at a time.  With ``keep_parts=False`` each part is folded into the
    total as soon as its sup norm is recorded.
    """
    kept: list[np.ndarray] = []
    sups: list[float] = []
    total = None

    def fold(part):
        nonlocal total
        sups.append(float(sym_opnorm(part).max()))
        if keep_parts:
            kept.append(part)
        if total is None:
            total = part.copy() if keep_parts else part
        else:
            total += part

    n = ctx.n_out
    eye = IDENTITY6.reshape((6, 1, 1, 1))
    u = pert.v - pert.v_ell
    bands = {"w": field_band(pert.w), "wo": field_band(pert.w_o), "wc": field_band(pert.w_c),
             "u": field_band(u)}
    grids = []
    # R^0 = R(D_t w + w . grad v_ell)
    src = pert.dtw.copy()
    if np.any(pert.v_ell):
        bands["v_ell"] = field_band(pert.v_ell)
        eng = _engine({"w": pert.w}, {"w": max(bands["w"], bands["v_ell"])})
        vh = forward(pert.v_ell)
        for i in range(3):  # (w . grad v_ell)_i, one velocity component at a time
            eng.add("dv", np.stack([inverse(derivative_symbol(n, j + 1) * vh[i], n) for j in range(3)]))
            src[i] += eng.dot("w", "dv")
        grids.append(eng.m)
        del eng, vh
    fold(inverse_divergence_array(src))
    del src
    # R^1 = R div(w_o x w_o - |w_o|^2/2 Id + sum chi^2 transported stress) and R^2
    eng = _engine({"wo": pert.w_o, "wc": pert.w_c}, bands)
    grids.append(eng.m)
    wo2 = eng.dot("wo", "wo")
    M1 = 0.5 * eng.sym_outer("wo", "wo") - 0.5 * wo2 * eye + pert.S
    divM1 = inverse(divergence_hat(forward(M1), n, 2), n)
    del M1
    fold(inverse_divergence_array(divM1))
    del divM1
    wc2 = eng.dot("wc", "wc")
    owc = eng.dot("wo", "wc")
    fold(eng.sym_outer("wo", "wc") + 0.5 * eng.sym_outer("wc", "wc") - ((wc2 + 2.0 * owc) / 3.0) * eye)
    del eng
    # R^3 and <u, w>
    if np.any(u):
        eng = _engine({"w": pert.w, "u": u}, bands)
        uw = eng.dot("u", "w")
        fold(eng.sym_outer("w", "u") - (2.0 * uw / 3.0) * eye)
        grids.append(eng.m)
        del eng
    else:
        uw = np.zeros(pert.w.shape[1:])
        fold(np.zeros((6,) + pert.w.shape[1:]))
    # R^4, R^5
    R_ell = mollify_array(R, ctx.mollifier)
    fold(R - R_ell)
    fold(pert.chi2_sum * R_ell - pert.S)
    del R_ell
    p1 = p[0] - 0.5 * wo2 - wc2 / 3.0 - 2.0 * owc / 3.0 - 2.0 * uw / 3.0
    shift = float(p1.mean())
    return StressParts(kept if keep_parts else None, sups, total, (p1 - shift)[np.newaxis], shift, wo2,
                       max(grids))


# ---------------------------------------------------------------------------
# Diagnostics and orchestration
# ---------------------------------------------------------------------------


DIAGNOSTIC_COLUMNS = [
    "stage", "t", "grid_n", "product_grid", "active_anchors", "rho_min", "rho_max",
    "w_o_sup", "w_c_sup", "w_sup", "w_c1", "corrector_ratio", "w_o_bound", "w_bound_0",
    "w_bound_1", "dp_sup", "dp_c1", "dp_bound_0", "dp_bound_1",
    "R_sup", "R_c1", "R0_sup", "R1_sup", "R2_sup", "R3_sup", "R4_sup", "R5_sup",
    "R0_ratio", "R1_ratio", "R2_ratio", "R3_ratio", "R4_ratio", "R5_ratio",
    "R_trace_rel", "R_asym_rel", "div_v_rel", "alias_fraction", "p_shift",
    "energy_w_o", "energy_bar", "energy_w_o_gap_rel", "energy_v", "energy_target", "energy_gap",
    "wc_form_gap_rel", "lform_gap_rel", "doublesum_residual", "oscillation_rel",
    "v_c1", "er_residual", "er_residual_rel", "dtw_fd_gap_rel", "DtR_sup",
]


def stress_scales(p: dict, eps: float) -> list[float]:
    """Reference sizes of ``R^0 .. R^5`` (estimates up to constants)."""
    d0, d1, l0, l1 = p["delta_q"], p["delta_q1"], p["lambda_q"], p["lambda_q1"]
    mu, ell = p["mu"], p["ell"]
    r0, r1 = math.sqrt(d0), math.sqrt(d1)
    base = d1 * r0 * l0 / mu
    return [r1 * mu / l1 ** (1 - eps) + r1 * d0 * l0 / (l1 ** (1 - eps) * mu * ell),
            base * l1 ** eps, base, r1 * r0 * l0 * ell, base + d1 * l0 * ell, base]


@dataclass
class SampleRecord:
    t: float
    v1: np.ndarray
    p1: np.ndarray
    R1: np.ndarray
    w: np.ndarray
    dtw: np.ndarray
    v_ell: np.ndarray
    row: dict


@dataclass
class StepResult:
    state: EulerReynoldsState
    rows: list[dict]
    constants: StepConstants
    checks: list
    flags: list[str]
    rho: dict[int, dict]


def _sample(ctx: StepContext, t: float, out_times: Sequence[float], consts: StepConstants) -> SampleRecord:
    n = ctx.n_out
    grid = Grid3(n)
    p = ctx.params
    pert = perturbation(ctx, t, out_times)
    R = ctx.state.stress(t, n)
    pr = ctx.state.pressure(t, n)
    parts = new_stress(ctx, pert, R, pr, keep_parts=False)
    del R
    wo_sup, wc_sup = _sup(pert.w_o, 1), _sup(pert.w_c, 1)
    doublesum = doublesum_check(pert) if ctx.cfg.doublesum else math.nan
    osc = oscillation_check(pert, ctx.lam)["relative"] if ctx.cfg.oscillation else math.nan
    pert.S = pert.w_o = pert.w_c = None  # large arrays not needed past this point
    v1 = pert.v + pert.w
    R1 = parts.total
    w_f = PeriodicField(grid, pert.w, 1)
    dp = parts.p1 - pr
    dp_f = PeriodicField(grid, dp, 0)
    R1_f = PeriodicField(grid, R1, 2)
    v1_f = PeriodicField(grid, v1, 1)
    r1, M = math.sqrt(p["delta_q1"]), consts.M
    R_sup = R1_f.sup()
    div = inverse(divergence_hat(forward(v1), n, 1), n)
    v1_c1 = c1_norm(v1_f)
    e_wo = TORUS_VOLUME * float(np.mean(parts.wo2))
    e_v = TORUS_VOLUME * float(np.mean(np.sum(v1 * v1, axis=0)))
    target = ctx.energy(t) * (1.0 - p["delta_q2"])
    w_sup = _sup(pert.w, 1)
    scales = stress_scales(p, ctx.schedule.eps)
    row = {
        "stage": ctx.q + 1, "t": t, "grid_n": n, "product_grid": parts.engine_grid,
        "active_anchors": " ".join(str(l) for l in pert.active),
        "rho_min": min(pert.rho.values()), "rho_max": max(pert.rho.values()),
        "w_o_sup": wo_sup, "w_c_sup": wc_sup, "w_sup": w_sup, "w_c1": c1_norm(w_f),
        "corrector_ratio": wc_sup / wo_sup if wo_sup > 0 else 0.0,
        "w_o_bound": 0.5 * M * r1, "w_bound_0": M * r1, "w_bound_1": M * r1 * p["lambda_q1"],
        "dp_sup": dp_f.sup(), "dp_c1": c1_norm(dp_f), "dp_bound_0": M * M * p["delta_q1"],
        "dp_bound_1": M * M * p["delta_q1"] * p["lambda_q1"],
        "R_sup": R_sup, "R_c1": c1_norm(R1_f),
    }
    for i, s in enumerate(parts.sups):
        row[f"R{i}_sup"] = s
        row[f"R{i}_ratio"] = s / scales[i] if scales[i] > 0 else math.nan
    row.update({
        "R_trace_rel": float(np.abs(sym_trace(R1)).max()) / max(R_sup, w_sup ** 2),
        "R_asym_rel": 0.0,  # symmetric storage: asymmetry is zero by construction
        "div_v_rel": float(np.abs(div).max()) / v1_c1 if v1_c1 > 0 else 0.0,
        "alias_fraction": pert.alias_fraction, "p_shift": parts.p_shift,
        "energy_w_o": e_wo, "energy_bar": pert.ebar,
        "energy_w_o_gap_rel": abs(e_wo - pert.ebar) / pert.ebar if pert.ebar > 0 else math.nan,
        "energy_v": e_v, "energy_target": target, "energy_gap": abs(target - e_v),
        # w - (w_o + w_c pointwise) equals w_c - w_c pointwise: one gap, two columns
        "wc_form_gap_rel": pert.form_gap / w_sup if w_sup > 0 else 0.0,
        "lform_gap_rel": pert.form_gap / w_sup if w_sup > 0 else 0.0,
        "doublesum_residual": doublesum, "oscillation_rel": osc,
        "v_c1": v1_c1,
    })
    return SampleRecord(t, v1, parts.p1, R1, pert.w, pert.dtw, pert.v_ell, row)


def _finalize(prev: SampleRecord | None, cur: SampleRecord, nxt: SampleRecord | None) -> dict:
    """Centered-difference diagnostics for ``cur`` (NaN at the window ends)."""
    row = cur.row
    row.update({"er_residual": math.nan, "er_residual_rel": math.nan, "dtw_fd_gap_rel": math.nan,
                "DtR_sup": math.nan})
    if prev is None or nxt is None:
        return row
    dt = 0.5 * (nxt.t - prev.t)
    n = cur.v1.shape[-1]
    d = [derivative_symbol(n, a) for a in (1, 2, 3)]
    dtv = (nxt.v1 - prev.v1) / (2 * dt)
    ph = forward(cur.p1[0])
    grad_p = np.stack([inverse(d[a] * ph, n) for a in range(3)])
    div_R = inverse(divergence_hat(forward(cur.R1), n, 2), n)
    res = dtv + nonlinear_flux(cur.v1) + grad_p - div_R
    er = _sup(res, 1)
    row["er_residual"] = er
    row["er_residual_rel"] = er / row["v_c1"] if row["v_c1"] > 0 else math.nan
    # finite-difference material derivative of w against the analytic one
    fd = (nxt.w - prev.w) / (2 * dt)
    if np.any(cur.v_ell):
        wh = forward(cur.w)
        for j in range(3):
            dj = inverse(d[j] * wh, n)
            fd = fd + np.stack([multiply_arrays(cur.v_ell[j], dj[i]) for i in range(3)])
    scale = _sup(cur.dtw, 1)
    row["dtw_fd_gap_rel"] = _sup(fd - cur.dtw, 1) / scale if scale > 0 else 0.0
    # D_t R_1 = d_t R_1 + v_1 . grad R_1
    DtR = (nxt.R1 - prev.R1) / (2 * dt)
    Rh = forward(cur.R1)
    for j in range(3):
        dj = inverse(d[j] * Rh, n)
        DtR = DtR + np.stack([multiply_arrays(cur.v1[j], dj[c]) for c in range(6)])
    row["DtR_sup"] = float(sym_opnorm(DtR).max())
    return row


def _trim(rec: SampleRecord):
    """Drop the fields a record only needs while it is the window centre."""
    rec.dtw = rec.v_ell = rec.p1 = None


def run_step(state: EulerReynoldsState, schedule: ParamSchedule, q: int, energy: EnergyProfile,
             solvers: Mapping[str, GammaSolver], cfg: StepConfig, times: Sequence[float],
             lambda_bar_sq: int = 5, retain: Iterable[float] | bool = True,
             on_row: Callable[[dict], None] | None = None) -> StepResult:
    """Run step ``q -> q + 1`` at the given output times (increasing, uniform).

    ``retain`` selects which samples of the new state are kept in memory
    (``True`` for all).  Diagnostics rows are returned in time order and also
    passed to ``on_row`` as soon as they are complete.
    """
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times[:-1], times[1:])):
        raise ValueError("output times must be increasing")
    try:
        ctx = StepContext(state, schedule, q, energy, solvers, lambda_bar_sq, cfg)
        consts = ctx.step_constants()
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise StepError(q + 1, None, exc) from exc
    keep_all = retain is True
    keep = set() if retain is False or retain is True else {float(t) for t in retain}
    samples: list[StateSample] = []
    rows: list[dict] = []
    window: deque[SampleRecord] = deque(maxlen=3)

    def emit(row):
        rows.append(row)
        if on_row is not None:
            on_row(row)

    for t in times:
        try:
            rec = _sample(ctx, t, times, consts)
        except Exception as exc:  # noqa: BLE001
            raise StepError(q + 1, t, exc) from exc
        if keep_all or any(abs(t - s) <= 1e-12 for s in keep):
            samples.append(StateSample(t, rec.v1, rec.p1, rec.R1))
        window.append(rec)
        if len(window) == 2 and len(rows) == 0:
            emit(_finalize(None, window[0], None))
            _trim(window[0])
        elif len(window) == 3:
            emit(_finalize(window[0], window[1], window[2]))
            _trim(window[1])
            window.popleft()  # no longer needed by any centered difference
        ctx.release(t)
    if len(window) == 1:
        emit(_finalize(None, window[0], None))
    elif len(window) >= 2:
        emit(_finalize(None, window[-1], None))
    new_state = EulerReynoldsState(q + 1, Grid3(ctx.n_out), samples,
                                   meta={"constants": consts.to_dict()})
    rho = {l: {"rho": a.rho, "rho_raw": a.rho_raw, "floored": a.floored}
           for l, a in sorted(ctx._anchors.items())}
    return StepResult(new_state, rows, consts, [c.to_dict() for c in ctx.checks], ctx.flags, rho)


def stage_times(final: Sequence[float], schedules_mu: Sequence[int], dt: float) -> list[list[float]]:
    """Sample times needed at every stage ``0..Q`` for a final window ``[t_a, t_b]``.

    Stage ``Q`` uses the window padded by one sample on each side.  Stage
    ``q`` must cover the times of stage ``q + 1`` and every cutoff anchor
    ``l / mu_q`` active there.  All times lie on the lattice ``j dt`` in ``[0, 1]``.
    """
    t_a, t_b = final
    jmax = int(round(1.0 / dt))

    def lattice(a, b):
        ja = max(0, int(math.floor(a / dt + 1e-9)))
        jb = min(jmax, int(math.ceil(b / dt - 1e-9)))
        return [j * dt for j in range(ja, jb + 1)]

    Q = len(schedules_mu)
    out = [None] * (Q + 1)
    out[Q] = lattice(t_a - dt, t_b + dt)
    for q in range(Q - 1, -1, -1):
        nxt = out[q + 1]
        mu = schedules_mu[q]
        anchors = [l / mu for l in range(0, mu + 1)
                   if any(abs(mu * s - l) < SUPPORT for s in nxt)]
        lo, hi = min(nxt + anchors), max(nxt + anchors)
        out[q] = lattice(lo, hi)
    return out


__all__ = ["StepContext", "StepConfig", "StepConstants", "Perturbation", "StressParts", "StepResult",
           "StepError", "EnergyGapError", "energy_gap", "constants", "perturbation",
           "doublesum_check", "oscillation_check", "new_pressure", "new_stress", "run_step",
           "stage_times", "DIAGNOSTIC_COLUMNS", "ProductEngine", "stress_scales"]
