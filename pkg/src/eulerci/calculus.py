"""Inverse divergence, Leray projection, mollification and decay measurements.

The inverse divergence ``R`` maps a vector field ``v`` to the symmetric,
trace-free tensor

    R v = 1/4 (grad P u + grad P u^T) + 3/4 (grad u + grad u^T) - 1/2 (div u) Id,

where ``Delta u = v - mean(v)`` and ``P`` is the Leray projection; it satisfies
``div R v = v - mean(v)``.  All operators are Fourier multipliers.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import roots_legendre

from .fields import (Grid3, PeriodicField, SYM_PAIRS, derivative_symbol, divergence_hat,
                     forward, holder_norm, inverse, inverse_laplacian_hat, multiply_arrays)


class UnderResolvedWarning(UserWarning):
    """A mollifier length scale is below the grid spacing."""


# ---------------------------------------------------------------------------
# Inverse divergence and projections
# ---------------------------------------------------------------------------


def _symbols(n: int, real: bool):
    return [derivative_symbol(n, a, real) for a in (1, 2, 3)]


def inverse_divergence_hat(vh: np.ndarray, n: int, real: bool = True) -> np.ndarray:
    """Spectral ``R v`` in 6-component storage from vector coefficients ``(3, ...)``."""
    d = _symbols(n, real)
    uh = inverse_laplacian_hat(vh, n, real)
    div_u = d[0] * uh[0] + d[1] * uh[1] + d[2] * uh[2]
    # P u = u - grad Delta^{-1} div u
    phi = inverse_laplacian_hat(div_u, n, real)
    puh = [uh[i] - d[i] * phi for i in range(3)]
    out = []
    for i, j in SYM_PAIRS:
        val = 0.25 * (d[j] * puh[i] + d[i] * puh[j]) + 0.75 * (d[j] * uh[i] + d[i] * uh[j])
        if i == j:
            val = val - 0.5 * div_u
        out.append(val)
    return np.stack(out)


def inverse_divergence(v: PeriodicField) -> PeriodicField:
    """``R v``: symmetric trace-free tensor with ``div R v = v - mean(v)``."""
    if v.rank != 1:
        raise ValueError("inverse_divergence expects a vector field")
    n = v.grid.n
    data = inverse(inverse_divergence_hat(v.hat, n, v.is_real), n, v.is_real)
    return PeriodicField(v.grid, data, 2, time=v.time, trace_free=True, name=f"R {v.name}")


def inverse_divergence_array(v: np.ndarray) -> np.ndarray:
    """Array version of :func:`inverse_divergence` for ``(3, n, n, n)`` data."""
    n = v.shape[-1]
    real = not np.iscomplexobj(v)
    return inverse(inverse_divergence_hat(forward(v), n, real), n, real)


def leray_hat(vh: np.ndarray, n: int, real: bool = True) -> np.ndarray:
    d = _symbols(n, real)
    div = d[0] * vh[0] + d[1] * vh[1] + d[2] * vh[2]
    phi = inverse_laplacian_hat(div, n, real)
    out = np.stack([vh[i] - d[i] * phi for i in range(3)])
    out[(slice(None),) + (0, 0, 0)] = 0.0
    return out


def leray_project(v: PeriodicField) -> PeriodicField:
    """Projection onto divergence-free, mean-zero vector fields."""
    if v.rank != 1:
        raise ValueError("leray_project expects a vector field")
    n = v.grid.n
    return v.with_data(inverse(leray_hat(v.hat, n, v.is_real), n, v.is_real))


def s_operator(v: PeriodicField) -> PeriodicField:
    """``S(v) = grad v + grad v^T - 2/3 (div v) Id`` in symmetric storage."""
    if v.rank != 1:
        raise ValueError("s_operator expects a vector field")
    n, real = v.grid.n, v.is_real
    d = _symbols(n, real)
    vh = v.hat
    div = d[0] * vh[0] + d[1] * vh[1] + d[2] * vh[2]
    out = []
    for i, j in SYM_PAIRS:
        val = d[j] * vh[i] + d[i] * vh[j]
        if i == j:
            val = val - (2.0 / 3.0) * div
        out.append(val)
    return PeriodicField(v.grid, inverse(np.stack(out), n, real), 2, time=v.time, trace_free=True)


def almost_inverse_defect(v: PeriodicField) -> float:
    """``||R v - S v - R(v - div S v)||_0`` for the identity relating ``R`` and ``S``."""
    n, real = v.grid.n, v.is_real
    sv = s_operator(v)
    div_sv = inverse(divergence_hat(sv.hat, n, 2, real), n, real)
    rest = v.with_data(v.data - div_sv)
    diff = inverse_divergence(v).data - sv.data - inverse_divergence(rest).data
    return float(np.max(np.abs(diff)))


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------


def bump(s: np.ndarray) -> np.ndarray:
    """Unnormalized 1-D profile ``exp(-1/(1-s^2))`` on ``|s| < 1``, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@functools.lru_cache(maxsize=4)
def _bump_quadrature(order: int = 600) -> tuple[np.ndarray, np.ndarray, float]:
    nodes, weights = roots_legendre(order)
    vals = bump(nodes)
    mass = float(np.sum(weights * vals))
    return nodes, weights * vals / mass, mass


def bump_transform(xi: np.ndarray, order: int = 600) -> np.ndarray:
    """Normalized transform ``phi_hat(xi) = int phi(s) cos(xi s) ds`` of the unit-mass profile."""
    nodes, wv, _ = _bump_quadrature(order)
    xi = np.asarray(xi, dtype=float)
    flat = xi.reshape(-1)
    out = np.empty_like(flat)
    chunk = 4096
    for start in range(0, flat.size, chunk):
        part = flat[start:start + chunk]
        out[start:start + chunk] = np.cos(np.outer(part, nodes)) @ wv
    return out.reshape(xi.shape)


@dataclass(frozen=True)
class Mollifier:
    """Tensorized bump kernel ``psi_ell(x) = prod_i phi(x_i/ell)/ell`` on the torus."""

    ell: float

    def __post_init__(self):
        if not self.ell > 0:
            raise ValueError("mollifier length scale must be positive")
        if self.ell >= np.pi:
            raise ValueError("mollifier support must fit inside the torus (ell < pi)")

    def axis_multiplier(self, n: int) -> np.ndarray:
        k = np.fft.fftfreq(n, 1.0 / n)
        return bump_transform(self.ell * k)

    def multiplier(self, n: int, real: bool = True) -> np.ndarray:
        """Fourier multiplier ``prod_i phi_hat(ell k_i)`` broadcastable against spectra."""
        return _multiplier_cached(self.ell, n, real)

    def kernel_samples(self, grid: Grid3) -> np.ndarray:
        """Grid samples of the periodized kernel (for inspection and tests)."""
        x = grid.axis_coords()
        x = np.where(x > np.pi, x - 2 * np.pi, x)
        _, _, mass = _bump_quadrature()
        prof = bump(x / self.ell) / (mass * self.ell)
        return prof[np.newaxis, np.newaxis, :] * prof[np.newaxis, :, np.newaxis] * prof[:, np.newaxis, np.newaxis]


@functools.lru_cache(maxsize=32)
def _multiplier_cached(ell: float, n: int, real: bool) -> np.ndarray:
    full = bump_transform(ell * np.fft.fftfreq(n, 1.0 / n))
    half = bump_transform(ell * np.fft.rfftfreq(n, 1.0 / n)) if real else full
    out = half.reshape(1, 1, -1) * full.reshape(1, -1, 1) * full.reshape(-1, 1, 1)
    out.setflags(write=False)
    return out


def mollify_array(a: np.ndarray, m: Mollifier) -> np.ndarray:
    n = a.shape[-1]
    real = not np.iscomplexobj(a)
    return inverse(m.multiplier(n, real) * forward(a), n, real)


def mollify(f: PeriodicField, m: Mollifier) -> PeriodicField:
    """Spatial convolution with ``psi_ell`` (spectral multiplication)."""
    if m.ell < f.grid.spacing:
        warnings.warn(f"mollifier scale {m.ell:.3g} is below the grid spacing "
                      f"{f.grid.spacing:.3g}; the kernel is under-resolved", UnderResolvedWarning,
                      stacklevel=2)
    n = f.grid.n
    data = inverse(m.multiplier(n, f.is_real) * f.hat, n, f.is_real)
    return f.with_data(data, trace_free=f.trace_free)


def cet_commutator_defect(f: PeriodicField, g: PeriodicField, m: Mollifier) -> PeriodicField:
    """``(f*psi)(g*psi) - (fg)*psi`` for scalar fields, with de-aliased products."""
    if f.rank != 0 or g.rank != 0:
        raise ValueError("cet_commutator_defect expects scalar fields")
    fl, gl = mollify(f, m), mollify(g, m)
    fg = multiply_arrays(f.data[0], g.data[0])
    flgl = multiply_arrays(fl.data[0], gl.data[0])
    return f.with_data((flgl - mollify_array(fg, m))[np.newaxis])


# ---------------------------------------------------------------------------
# Sweeps and decay reports
# ---------------------------------------------------------------------------


def fitted_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.maximum(np.asarray(ys, dtype=float), 1e-300))
    A = np.vstack([x, np.ones_like(x)]).T
    slope, _ = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(slope)


@dataclass
class DecayReport:
    """Measured values along a sweep and the fitted power law.

    ``order`` is the decay order: ``values ~ C * scale**(-order)`` for
    frequency sweeps and ``values ~ C * scale**order`` for length-scale sweeps
    (``kind`` records which).
    """

    name: str
    kind: str
    scales: list[float]
    values: list[float]
    order: float
    truncated: bool = False
    notes: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[float, float, float]]:
        return [(s, v, self.order) for s, v in zip(self.scales, self.values)]

    def to_csv(self) -> str:
        head = [f"# {self.name}: fitted order {self.order:.6f} ({self.kind} sweep)"]
        if self.truncated:
            head.append("# WARNING: sweep truncated at the resolved band")
        lines = head + ["scale,value,fitted_order"]
        lines += [f"{s!r},{v!r},{o!r}" for s, v, o in self.rows()]
        return "\n".join(lines) + "\n"


def _decay_report(name, kind, scales, values, truncated=False, notes=None) -> DecayReport:
    slope = fitted_slope(scales, values)
    order = -slope if kind == "frequency" else slope
    return DecayReport(name, kind, list(map(float, scales)), list(map(float, values)), order,
                       truncated, notes or {})


def cet_sweep(f: PeriodicField, g: PeriodicField, ells: Sequence[float], r: int = 0) -> DecayReport:
    """``||(f*psi)(g*psi) - (fg)*psi||_r`` along a length-scale sweep."""
    vals = []
    for ell in ells:
        defect = cet_commutator_defect(f, g, Mollifier(float(ell)))
        vals.append(holder_norm(defect, r, 0.0, check=False).value)
    return _decay_report("cet_commutator", "length", ells, vals)


def plane_wave(grid: Grid3, k: Sequence[int], lam: int) -> np.ndarray:
    x1, x2, x3 = grid.coords()
    return np.exp(1j * lam * (k[0] * x1 + k[1] * x2 + k[2] * x3))


def _in_band(grid: Grid3, band: int, k: Sequence[int], lam: int) -> bool:
    return band + lam * max(abs(int(c)) for c in k) < grid.nyquist


def stationary_phase_integrals(a: PeriodicField, k: Sequence[int],
                               lams: Sequence[int]) -> DecayReport:
    """``|int a exp(i lam k.x) dx|`` over a frequency sweep (grid quadrature).

    The quadrature is exact as long as ``a``'s band plus ``lam |k|_inf`` stays
    below Nyquist; points beyond are dropped and the report is flagged.
    """
    band = a.band()
    vol = (2 * np.pi) ** 3
    kept, vals = [], []
    for lam in lams:
        if not _in_band(a.grid, band, k, lam):
            continue
        wave = plane_wave(a.grid, k, lam)
        integ = vol * np.mean(a.data * wave, axis=(-3, -2, -1))
        vals.append(float(np.sqrt(np.sum(np.abs(integ) ** 2))))
        kept.append(lam)
    if len(kept) < 2:
        raise ValueError("fewer than two sweep points are resolved on this grid")
    return _decay_report("stationary_phase_integral", "frequency", kept, vals,
                         truncated=len(kept) < len(lams))


def _real_modulated(a: PeriodicField, k: Sequence[int], lam: int) -> np.ndarray:
    """Real part of ``a exp(i lam k.x)`` as a vector array ``(3, ...)``."""
    wave = plane_wave(a.grid, k, lam)
    if a.rank == 0:
        raise ValueError("a vector amplitude is required")
    return np.real(a.data * wave)


def stationary_phase_operator(a: PeriodicField, k: Sequence[int], lams: Sequence[int],
                              alpha: float = 0.25) -> DecayReport:
    """``||R(a cos(lam k.x))||_alpha`` over a frequency sweep for a vector amplitude ``a``."""
    band = a.band()
    kept, vals = [], []
    for lam in lams:
        if not _in_band(a.grid, band, k, lam):
            continue
        F = _real_modulated(a, k, lam)
        RF = PeriodicField(a.grid, inverse_divergence_array(F), 2)
        vals.append(holder_norm(RF, 0, alpha).value)
        kept.append(lam)
    if len(kept) < 2:
        raise ValueError("fewer than two sweep points are resolved on this grid")
    return _decay_report("stationary_phase_operator", "frequency", kept, vals,
                         truncated=len(kept) < len(lams), notes={"alpha": alpha})


def stationary_phase_decay(a: PeriodicField, k: Sequence[int], lams: Sequence[int],
                           alpha: float = 0.25) -> tuple[DecayReport, DecayReport | None]:
    """Both stationary-phase measurements: the oscillatory integral of ``a`` and,
    for vector ``a``, the Hölder norm of ``R`` applied to the modulated field."""
    integral = stationary_phase_integrals(a, k, lams)
    operator = stationary_phase_operator(a, k, lams, alpha) if a.rank == 1 else None
    return integral, operator


def br_commutator(b: PeriodicField, F: np.ndarray) -> np.ndarray:
    """``b R(F) - R(b F)`` for scalar ``b`` and vector data ``F`` (de-aliased products)."""
    bb = b.band()
    RF = inverse_divergence_array(F)
    bRF = multiply_arrays(b.data[0][np.newaxis], RF, bb)
    bF = multiply_arrays(b.data[0][np.newaxis], F, bb)
    return bRF - inverse_divergence_array(bF)


def br_commutator_decay(b: PeriodicField, a: PeriodicField, k: Sequence[int],
                        lams: Sequence[int], alpha: float = 0.25) -> DecayReport:
    """``||[b, R](a cos(lam k.x))||_alpha`` over a frequency sweep."""
    if b.rank != 0 or a.rank != 1:
        raise ValueError("b must be scalar and a a vector field")
    band = a.band() + b.band()
    kept, vals = [], []
    for lam in lams:
        if not _in_band(a.grid, band, k, lam):
            continue
        F = _real_modulated(a, k, lam)
        C = PeriodicField(a.grid, br_commutator(b, F), 2)
        vals.append(holder_norm(C, 0, alpha).value)
        kept.append(lam)
    if len(kept) < 2:
        raise ValueError("fewer than two sweep points are resolved on this grid")
    return _decay_report("br_commutator", "frequency", kept, vals,
                         truncated=len(kept) < len(lams), notes={"alpha": alpha})


@dataclass
class SchauderReport:
    laplace_ratios: list[float]
    inverse_divergence_ratios: list[float]
    alpha: float
    skipped: int = 0

    @property
    def max_laplace(self) -> float:
        return max(self.laplace_ratios, default=float("nan"))

    @property
    def max_inverse_divergence(self) -> float:
        return max(self.inverse_divergence_ratios, default=float("nan"))


def schauder_ratio_report(scalars: Sequence[PeriodicField], vectors: Sequence[PeriodicField],
                          alpha: float = 0.25) -> SchauderReport:
    """Observed ``||phi||_{2+a}/||f||_a`` (``Delta phi = f``) and ``||R v||_{1+a}/||v||_a``."""
    lap, rv = [], []
    skipped = 0
    for f in scalars:
        denom = holder_norm(f, 0, alpha).value
        if denom == 0.0:
            skipped += 1
            continue
        n = f.grid.n
        phi = f.with_data(inverse(inverse_laplacian_hat(f.hat, n, f.is_real), n, f.is_real))
        lap.append(holder_norm(phi, 2, alpha).value / denom)
    for v in vectors:
        denom = holder_norm(v, 0, alpha).value
        if denom == 0.0:
            skipped += 1
            continue
        rv.append(holder_norm(inverse_divergence(v), 1, alpha).value / denom)
    return SchauderReport(lap, rv, alpha, skipped)


__all__ = ["inverse_divergence", "inverse_divergence_hat", "inverse_divergence_array",
           "leray_project", "leray_hat", "s_operator", "almost_inverse_defect", "Mollifier",
           "mollify", "mollify_array", "bump", "bump_transform", "cet_commutator_defect",
           "cet_sweep", "stationary_phase_integrals", "stationary_phase_operator",
           "br_commutator", "br_commutator_decay", "schauder_ratio_report", "SchauderReport",
           "DecayReport", "fitted_slope", "plane_wave", "UnderResolvedWarning",
           "stationary_phase_decay"]
