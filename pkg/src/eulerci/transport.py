"""Flow maps of time-sampled velocity fields and transported quantities.

The inverse flow ``Phi_l`` anchored at ``t0 = l/mu`` solves
``d_t Phi + v . grad Phi = 0`` with ``Phi(x, t0) = x``.  It is stored through the
periodic displacement ``psi = Phi - x``.  Two solvers are provided:

* ``"characteristics"``: from every node ``x`` at time ``t`` integrate
  ``dy/ds = v(y, s)`` back (or forward) to ``s = t0`` with classical RK4; then
  ``Phi(x, t) = y(t0)``.  Off-grid velocities come from exact trigonometric
  interpolation (non-uniform FFT).
* ``"eulerian"``: integrate ``d_t psi = -v - (v . grad) psi`` pseudo-spectrally
  with RK4, products projected with the 3/2 rule.  One sweep yields the map at
  every requested time, which makes it the cheaper route inside the iteration.

Velocities between stored time slices are interpolated linearly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .fields import (AliasingError, Grid3, PeriodicField, derivative_symbol, forward,
                     friendly_size, inverse, matrix_opnorm, pointwise_norm, resample,
                     resample_hat)

logger = logging.getLogger(__name__)

try:  # pragma: no cover - exercised implicitly
    import finufft
except ImportError:  # pragma: no cover
    finufft = None

INTERP_EPS = 1e-11


# ---------------------------------------------------------------------------
# Trigonometric interpolation at scattered points
# ---------------------------------------------------------------------------


def full_coefficients(data: np.ndarray, check: bool = True, tol: float = 1e-9,
                      atol: float = 0.0) -> np.ndarray:
    """Complex Fourier coefficients ``(ncomp, n, n, n)`` with Nyquist planes removed.

    Nyquist content above ``max(tol * peak, atol)`` raises :class:`AliasingError`;
    ``atol`` keeps round-off-sized data from tripping the relative test.
    """
    n = data.shape[-1]
    ch = np.fft.fftn(data, axes=(-3, -2, -1), norm="forward")
    peak = float(np.abs(ch).max()) if ch.size else 0.0
    h = n // 2
    nyq = max(float(np.abs(ch[..., h, :, :]).max()), float(np.abs(ch[..., :, h, :]).max()),
              float(np.abs(ch[..., :, :, h]).max()))
    if check and peak > 0 and nyq > max(tol * peak, atol):
        raise AliasingError(f"interpolated field has relative Nyquist content {nyq / peak:.2e}; "
                            f"grid N={n} does not resolve it")
    ch[..., h, :, :] = 0.0
    ch[..., :, h, :] = 0.0
    ch[..., :, :, h] = 0.0
    return ch


def trig_interpolate(coeffs: np.ndarray, points: np.ndarray, eps: float = INTERP_EPS) -> np.ndarray:
    """Evaluate ``sum_k c_k exp(i k.x)`` at ``points`` (shape ``(3, P)``).

    ``coeffs`` has shape ``(ncomp, n, n, n)`` in FFT order over ``(k3, k2, k1)``.
    Returns the real part, shape ``(ncomp, P)``.
    """
    pts = np.mod(points, 2.0 * np.pi)
    ncomp = coeffs.shape[0]
    if finufft is not None:
        x1 = np.ascontiguousarray(pts[0])
        x2 = np.ascontiguousarray(pts[1])
        x3 = np.ascontiguousarray(pts[2])
        # finufft's first mode axis pairs with its first coordinate: axes are (k3, k2, k1)
        c = np.ascontiguousarray(coeffs.astype(np.complex128))
        out = finufft.nufft3d2(x3, x2, x1, c if ncomp > 1 else c[0], eps=eps, isign=1,
                               modeord=1, nthreads=1)
        out = np.atleast_2d(out)
        return out.real
    return direct_interpolate(coeffs, pts).real  # pragma: no cover


def direct_interpolate(coeffs: np.ndarray, points: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Direct summation of the Fourier series at ``points`` (slow reference)."""
    n = coeffs.shape[-1]
    k = np.fft.fftfreq(n, 1.0 / n)
    P = points.shape[1]
    out = np.empty((coeffs.shape[0], P), dtype=complex)
    for s in range(0, P, chunk):
        p = points[:, s:s + chunk]
        e1 = np.exp(1j * np.outer(k, p[0]))
        e2 = np.exp(1j * np.outer(k, p[1]))
        e3 = np.exp(1j * np.outer(k, p[2]))
        out[:, s:s + chunk] = np.einsum("czyx,zp,yp,xp->cp", coeffs, e3, e2, e1)
    return out


def compose(data: np.ndarray, displacement: np.ndarray, eps: float = INTERP_EPS,
            atol: float = 0.0) -> np.ndarray:
    """``f(x + psi(x))`` on the displacement's grid for grid data ``f``.

    ``f`` may live on a different (coarser or finer) grid than ``psi``; it is
    evaluated through its trigonometric interpolant.
    """
    n_out = displacement.shape[-1]
    grid = Grid3(n_out)
    pts = (grid.mesh() + displacement).reshape(3, -1)
    vals = trig_interpolate(full_coefficients(data, atol=atol), pts, eps)
    return vals.reshape((data.shape[0],) + (n_out,) * 3)


# ---------------------------------------------------------------------------
# Time-sampled fields
# ---------------------------------------------------------------------------


class TimeSeries:
    """Vector (or tensor) field samples at increasing times with linear interpolation."""

    def __init__(self, times: Sequence[float], data: Sequence[np.ndarray] | np.ndarray):
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise ValueError("times must be a non-empty 1-D sequence")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        self.data = list(data)
        if len(self.data) != len(self.times):
            raise ValueError("one sample per time is required")
        self._coeffs: dict[int, np.ndarray] = {}
        self._zero: dict[int, bool] = {}

    @classmethod
    def constant(cls, data: np.ndarray, t_start: float = 0.0, t_end: float = 1.0) -> "TimeSeries":
        return cls([t_start, t_end], [data, data])

    @property
    def n(self) -> int:
        return self.data[0].shape[-1]

    def index(self, t: float, tol: float = 1e-12) -> int | None:
        j = int(np.argmin(np.abs(self.times - t)))
        return j if abs(self.times[j] - t) <= tol else None

    def bracket(self, t: float) -> tuple[int, int, float]:
        """Slice indices ``(j, j+1)`` and weight ``theta`` with ``t = (1-theta) t_j + theta t_{j+1}``."""
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"time {t} outside the sampled range [{ts[0]}, {ts[-1]}]")
        j = self.index(t)
        if j is not None:
            return j, j, 0.0
        j = int(np.searchsorted(ts, t) - 1)
        j = min(max(j, 0), len(ts) - 2)
        theta = (t - ts[j]) / (ts[j + 1] - ts[j])
        return j, j + 1, float(theta)

    def at(self, t: float) -> np.ndarray:
        j0, j1, th = self.bracket(t)
        if j0 == j1:
            return self.data[j0]
        return (1.0 - th) * self.data[j0] + th * self.data[j1]

    def coefficients(self, j: int) -> np.ndarray:
        if j not in self._coeffs:
            self._coeffs[j] = full_coefficients(self.data[j])
        return self._coeffs[j]

    def is_zero(self, j: int) -> bool:
        if j not in self._zero:
            self._zero[j] = not np.any(self.data[j])
        return self._zero[j]

    def zero_between(self, ta: float, tb: float) -> bool:
        lo, hi = min(ta, tb), max(ta, tb)
        ja = self.bracket(lo)[0]
        jb = self.bracket(hi)[1]
        return all(self.is_zero(j) for j in range(ja, jb + 1))

    def sup(self, ta: float, tb: float) -> float:
        lo, hi = min(ta, tb), max(ta, tb)
        ja, jb = self.bracket(lo)[0], self.bracket(hi)[1]
        return max(float(pointwise_norm(self.data[j], 1).max()) for j in range(ja, jb + 1))

    def interpolate(self, points: np.ndarray, s: float, eps: float = INTERP_EPS) -> np.ndarray:
        """Velocity at scattered ``points`` and time ``s``."""
        j0, j1, th = self.bracket(s)
        if j0 == j1 or th == 0.0 or self.data[j0] is self.data[j1]:
            return trig_interpolate(self.coefficients(j0), points, eps)
        if th == 1.0:
            return trig_interpolate(self.coefficients(j1), points, eps)
        c = np.concatenate([self.coefficients(j0), self.coefficients(j1)])
        vals = trig_interpolate(c, points, eps)
        m = vals.shape[0] // 2
        return (1.0 - th) * vals[:m] + th * vals[m:]


# ---------------------------------------------------------------------------
# Flow maps
# ---------------------------------------------------------------------------


@dataclass
class FlowMap:
    """Inverse flow ``Phi(x, t)`` anchored at ``t0``, stored as displacement ``Phi - x``."""

    t0: float
    t: float
    displacement: np.ndarray
    flags: list[str] = field(default_factory=list)
    steps: int = 0
    method: str = ""

    @property
    def grid(self) -> Grid3:
        return Grid3(self.displacement.shape[-1])

    @property
    def is_identity(self) -> bool:
        return not np.any(self.displacement)

    def jacobian_minus_identity(self) -> np.ndarray:
        """``D Phi - Id`` as ``(3, 3, n, n, n)`` with ``[i, j] = d psi_i / d x_j``."""
        n = self.displacement.shape[-1]
        if self.is_identity:
            return np.zeros((3, 3) + (n,) * 3)
        h = forward(self.displacement)
        return np.stack([np.stack([inverse(derivative_symbol(n, j + 1) * h[i], n)
                                   for j in range(3)]) for i in range(3)])

    def jacobian(self) -> np.ndarray:
        J = self.jacobian_minus_identity()
        for i in range(3):
            J[i, i] += 1.0
        return J

    def deviation(self) -> float:
        """``||D Phi - Id||_0`` (pointwise operator norm)."""
        if self.is_identity:
            return 0.0
        return float(matrix_opnorm(self.jacobian_minus_identity()).max())

    def to_fields(self) -> tuple[PeriodicField, np.ndarray]:
        g = self.grid
        return (PeriodicField(g, self.displacement, 1, time=self.t, name=f"displacement t0={self.t0}"),
                self.jacobian())


def step_schedule(t_start: float, t_end: float, breakpoints: Iterable[float], h_max: float) -> list[float]:
    """Monotone list of RK4 nodes from ``t_start`` to ``t_end``.

    Segments between consecutive breakpoints (stored slice times) are split
    into equal steps no longer than ``h_max`` so that no step straddles a slice.
    """
    lo, hi = min(t_start, t_end), max(t_start, t_end)
    inner = sorted({b for b in breakpoints if lo + 1e-12 < b < hi - 1e-12})
    nodes = [lo] + inner + [hi]
    out = [lo]
    for a, b in zip(nodes[:-1], nodes[1:]):
        m = max(1, math.ceil((b - a) / h_max - 1e-9))
        out.extend(a + (b - a) * (i + 1) / m for i in range(m))
    out[-1] = hi
    if t_start > t_end:
        out = out[::-1]
    return out


def default_step(v: TimeSeries, mu: float, ta: float, tb: float) -> float:
    """Step bound ``min(1/(20 mu), 1/(10 ||v||_0 N / 2 pi))``."""
    vmax = v.sup(ta, tb)
    h = 1.0 / (20.0 * mu)
    if vmax > 0:
        h = min(h, 2.0 * np.pi / (10.0 * vmax * v.n))
    return h


def _flag(flow: FlowMap) -> FlowMap:
    dev = flow.deviation()
    if dev > 1.0:
        flow.flags.append(f"cfl: ||DPhi - Id||_0 = {dev:.3g} > 1")
        logger.warning("flow map anchored at %.4g, t=%.4g: %s", flow.t0, flow.t, flow.flags[-1])
    return flow


def characteristic_endpoints(v: TimeSeries, x: np.ndarray, t: float, t0: float, h_max: float,
                             eps: float = INTERP_EPS) -> tuple[np.ndarray, int]:
    """Integrate ``dy/ds = v(y, s)`` from ``y(t) = x`` to ``s = t0`` with RK4."""
    nodes = step_schedule(t, t0, v.times, h_max)
    y = x.copy()
    for s, s_next in zip(nodes[:-1], nodes[1:]):
        h = s_next - s
        k1 = v.interpolate(y, s, eps)
        k2 = v.interpolate(y + 0.5 * h * k1, s + 0.5 * h, eps)
        k3 = v.interpolate(y + 0.5 * h * k2, s + 0.5 * h, eps)
        k4 = v.interpolate(y + h * k3, s_next, eps)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y, len(nodes) - 1


def _advect_rhs(psi_hat: np.ndarray, vel: np.ndarray, n: int, m: int) -> np.ndarray:
    """Spectral ``-v - (v . grad) psi`` with the product formed on an ``m`` grid."""
    grads = [inverse(resample_hat(derivative_symbol(n, a) * psi_hat, n, m), m) for a in (1, 2, 3)]
    vm = resample(vel, m) if m != n else vel
    adv = vm[0] * grads[0] + vm[1] * grads[1] + vm[2] * grads[2]
    return -forward(vel) - resample_hat(forward(adv), m, n)


def eulerian_flow_maps(v: TimeSeries, t0: float, times: Sequence[float], h_max: float,
                       n_out: int | None = None) -> dict[float, FlowMap]:
    """Displacements at several times from one pseudo-spectral sweep per direction.

    ``n_out`` optionally resolves the displacement on a finer grid than the
    velocity samples (velocities are spectrally resampled).
    """
    n = n_out or v.n
    m = friendly_size((3 * n) // 2)
    out: dict[float, FlowMap] = {}
    for direction in (+1, -1):
        targets = sorted((t for t in times if (t - t0) * direction > 1e-14), key=lambda t: abs(t - t0))
        if not targets:
            continue
        end = targets[-1]
        nodes = step_schedule(t0, end, list(v.times) + list(targets), h_max)
        psi = np.zeros((3, n, n, n // 2 + 1), dtype=complex)
        remaining = list(targets)

        def vel(s):
            a = v.at(s)
            return resample(a, n) if a.shape[-1] != n else a

        for s, s_next in zip(nodes[:-1], nodes[1:]):
            h = s_next - s
            k1 = _advect_rhs(psi, vel(s), n, m)
            vm = vel(s + 0.5 * h)
            k2 = _advect_rhs(psi + 0.5 * h * k1, vm, n, m)
            k3 = _advect_rhs(psi + 0.5 * h * k2, vm, n, m)
            k4 = _advect_rhs(psi + h * k3, vel(s_next), n, m)
            psi = psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            while remaining and abs(remaining[0] - s_next) < 1e-12:
                t = remaining.pop(0)
                out[t] = _flag(FlowMap(t0, t, inverse(psi, n), steps=len(nodes) - 1,
                                       method="eulerian"))
    for t in times:
        if abs(t - t0) <= 1e-14:
            out[t] = FlowMap(t0, t, np.zeros((3, n, n, n)), method="identity")
    return out


def solve_flow_map(v_ell: TimeSeries, l: int, mu: float, t: float, method: str = "characteristics",
                   h_max: float | None = None, eps: float = INTERP_EPS) -> FlowMap:
    """Inverse flow ``Phi_l(., t)`` of ``v_ell`` anchored at ``l/mu``."""
    t0 = l / mu
    if abs(t - t0) > 1.0 / mu + 1e-12:
        raise ValueError(f"|t - l/mu| = {abs(t - t0):.4g} exceeds the cutoff window 1/mu")
    n = v_ell.n
    if abs(t - t0) <= 1e-14 or v_ell.zero_between(t, t0):
        return FlowMap(t0, t, np.zeros((3, n, n, n)), method="identity")
    h = h_max or default_step(v_ell, mu, t, t0)
    if method == "characteristics":
        x = Grid3(n).mesh().reshape(3, -1)
        y, steps = characteristic_endpoints(v_ell, x, t, t0, h, eps)
        disp = (y - x).reshape(3, n, n, n)
        return _flag(FlowMap(t0, t, disp, steps=steps, method=method))
    if method == "eulerian":
        return eulerian_flow_maps(v_ell, t0, [t], h)[t]
    raise ValueError(f"unknown flow-map method {method!r}")


def transported_stress(R_ell: PeriodicField | np.ndarray, flow: FlowMap,
                       eps: float = INTERP_EPS, atol: float = 0.0) -> PeriodicField:
    """``R_ell(Phi(x, t))``: values carried unchanged along the characteristics."""
    field_in = R_ell if isinstance(R_ell, PeriodicField) else PeriodicField(
        Grid3(R_ell.shape[-1]), R_ell, 2, trace_free=True)
    n_out = flow.displacement.shape[-1]
    if flow.is_identity:
        data = field_in.data if field_in.grid.n == n_out else resample(field_in.data, n_out)
        out = data.copy()
    else:
        out = compose(field_in.data, flow.displacement, eps, atol)
    return PeriodicField(Grid3(n_out), out, field_in.rank, time=flow.t,
                         trace_free=field_in.trace_free, name="transported stress")


# ---------------------------------------------------------------------------
# Transport estimates
# ---------------------------------------------------------------------------


def upsampled_sup(data: np.ndarray, rank: int, factor: int = 2) -> float:
    """Sup of the pointwise norm of the trigonometric interpolant on a refined grid."""
    n = data.shape[-1]
    up = resample(data, factor * n) if factor > 1 else data
    return float(pointwise_norm(up, rank).max())


def _gradient_matrix(data: np.ndarray) -> np.ndarray:
    """``(ncomp, 3, n, n, n)`` spectral Jacobian of grid data."""
    n = data.shape[-1]
    h = forward(data)
    return np.stack([np.stack([inverse(derivative_symbol(n, j + 1) * h[i], n) for j in range(3)])
                     for i in range(data.shape[0])])


def c1_seminorm_op(data: np.ndarray, factor: int = 2) -> float:
    """``sup |D f|`` with the Euclidean norm (scalars) or operator norm (vectors)."""
    J = _gradient_matrix(data)
    if factor > 1:
        J = resample(J.reshape((-1,) + J.shape[-3:]), factor * data.shape[-1]).reshape(
            J.shape[:2] + (factor * data.shape[-1],) * 3)
    if data.shape[0] == 1:
        return float(pointwise_norm(J[0], 1).max())
    if data.shape[0] == 3:
        return float(matrix_opnorm(J).max())
    raise ValueError("expected scalar or vector data")


@dataclass
class TransportRow:
    t: float
    sup_f: float
    max_principle_bound: float
    grad_f: float
    gradient_bound: float
    flow_deviation: float
    flow_bound: float

    @property
    def holds(self) -> dict[str, bool]:
        return {"max_principle": self.sup_f <= self.max_principle_bound,
                "gradient": self.grad_f <= self.gradient_bound,
                "flow": self.flow_deviation <= self.flow_bound}

    @property
    def margins(self) -> dict[str, float]:
        def rel(lhs, rhs):
            return (rhs - lhs) / rhs if rhs > 0 else (0.0 if lhs == 0 else -np.inf)
        return {"max_principle": rel(self.sup_f, self.max_principle_bound),
                "gradient": rel(self.grad_f, self.gradient_bound),
                "flow": rel(self.flow_deviation, self.flow_bound)}


@dataclass
class TransportReport:
    rows: list[TransportRow]
    v_c1: float
    f0_sup: float
    f0_c1: float
    g_sup: float
    g_c1: float
    solutions: list[np.ndarray] = field(default_factory=list, repr=False)
    displacements: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def all_hold(self) -> bool:
        return all(all(r.holds.values()) for r in self.rows)

    @property
    def min_margins(self) -> dict[str, float]:
        keys = ("max_principle", "gradient", "flow")
        return {k: min(r.margins[k] for r in self.rows) for k in keys}


def verify_transport_estimates(v_ell: PeriodicField, f0: PeriodicField, g: PeriodicField | None,
                               horizon: float, n_times: int = 8, mu: float | None = None,
                               eps: float = INTERP_EPS, upsample: int = 2,
                               h_max: float | None = None) -> TransportReport:
    """Solve ``d_t f + v . grad f = g`` (time-independent ``v``, ``g``) and check the bounds.

    The solution is built along backward characteristics: for a node ``x`` and
    elapsed time ``T``, ``f(x, t0+T) = f0(y(T)) + int_0^T g(y(s)) ds`` where
    ``dy/ds = -v(y)``, ``y(0) = x``.  One RK4 sweep serves all sampled times.
    Norms on the right-hand sides use pointwise operator norms; sups are taken
    on a grid refined by ``upsample``.
    """
    n = v_ell.grid.n
    gdata = g.data if g is not None else np.zeros((1,) + v_ell.grid.shape)
    mu = mu or 1.0 / horizon
    vmax = upsampled_sup(v_ell.data, 1, upsample)
    h = h_max or min(1.0 / (20.0 * mu), 2.0 * np.pi / (10.0 * max(vmax, 1e-300) * n))
    samples = [horizon * (j + 1) / n_times for j in range(n_times)]
    nodes = step_schedule(0.0, horizon, samples, h)
    vc = full_coefficients(v_ell.data)
    gc = full_coefficients(gdata)
    coeff = np.concatenate([vc, gc])

    def rhs(y):
        vals = trig_interpolate(coeff, y, eps)
        return -vals[:3], vals[3]

    x = Grid3(n).mesh().reshape(3, -1)
    y = x.copy()
    acc = np.zeros(x.shape[1])
    f0c = full_coefficients(f0.data)
    pending = list(samples)
    solutions, displacements = [], []
    for s, s_next in zip(nodes[:-1], nodes[1:]):
        dt = s_next - s
        a1, b1 = rhs(y)
        a2, b2 = rhs(y + 0.5 * dt * a1)
        a3, b3 = rhs(y + 0.5 * dt * a2)
        a4, b4 = rhs(y + dt * a3)
        y = y + (dt / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        acc = acc + (dt / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        while pending and abs(pending[0] - s_next) < 1e-12:
            pending.pop(0)
            fvals = trig_interpolate(f0c, y, eps)[0] + acc
            solutions.append(fvals.reshape(1, n, n, n))
            displacements.append((y - x).reshape(3, n, n, n))

    v_c1 = c1_seminorm_op(v_ell.data, upsample)
    f0_sup = upsampled_sup(f0.data, 0, upsample)
    f0_c1 = c1_seminorm_op(f0.data, upsample)
    g_sup = upsampled_sup(gdata, 0, upsample)
    g_c1 = c1_seminorm_op(gdata, upsample)
    rows = []
    for T, f, disp in zip(samples, solutions, displacements):
        growth = math.exp(T * v_c1)
        integ = (growth - 1.0) / v_c1 if v_c1 > 0 else T
        dev = c1_seminorm_op(disp, upsample)
        rows.append(TransportRow(
            t=T, sup_f=upsampled_sup(f, 0, upsample), max_principle_bound=f0_sup + T * g_sup,
            grad_f=c1_seminorm_op(f, upsample), gradient_bound=f0_c1 * growth + g_c1 * integ,
            flow_deviation=dev, flow_bound=growth - 1.0))
    return TransportReport(rows, v_c1, f0_sup, f0_c1, g_sup, g_c1, solutions, displacements)


__all__ = ["FlowMap", "TimeSeries", "solve_flow_map", "eulerian_flow_maps", "transported_stress",
           "verify_transport_estimates", "TransportReport", "TransportRow", "trig_interpolate",
           "direct_interpolate", "full_coefficients", "compose", "step_schedule", "default_step",
           "characteristic_endpoints", "upsampled_sup", "c1_seminorm_op"]
