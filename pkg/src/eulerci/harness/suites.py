"""Property suites run by ``eulerci verify``.

Each suite returns a list of :class:`PropertyResult` with the measured value,
the threshold and a verdict.  Random inputs come from a
``numpy.random.Generator`` seeded by the caller, so identical seeds give
identical reports.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .. import beltrami as bt
from .. import calculus as calc
from .. import fields as fl
from .. import geometry as geo
from .. import transport as tr

#: Relative slack for bounds that can hold with equality (round-off only).
ROUNDOFF_MARGIN = 1e-10

SUITES = ("fields", "beltrami", "geometry", "calculus", "transport", "iteration")


@dataclass
class PropertyResult:
    """Verdict of one property: ``measured <op> threshold``."""

    suite: str
    name: str
    measured: float
    threshold: float
    comparison: str = "<="
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        m, t = self.measured, self.threshold
        if m is None or (isinstance(m, float) and math.isnan(m)):
            return False
        return m <= t if self.comparison == "<=" else m >= t

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


class _Recorder:
    def __init__(self, suite: str):
        self.suite = suite
        self.results: list[PropertyResult] = []

    def check(self, name: str, fn: Callable[[], tuple], comparison: str = "<="):
        """``fn`` returns ``(measured, threshold)`` or ``(measured, threshold, details)``."""
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:  # noqa: BLE001 - a crash is a failed property
            res = PropertyResult(self.suite, name, math.nan, math.nan, comparison,
                                 {"error": f"{type(exc).__name__}: {exc}"})
        else:
            details = out[2] if len(out) > 2 else {}
            res = PropertyResult(self.suite, name, float(out[0]), float(out[1]), comparison, details)
        res.seconds = time.perf_counter() - t0
        self.results.append(res)
        return res


def _rel(a: float, b: float) -> float:
    return a / b if b > 0 else a


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def suite_fields(rng: np.random.Generator) -> list[PropertyResult]:
    rec = _Recorder("fields")
    g = fl.Grid3(32)

    def roundtrip():
        worst = 0.0
        for _ in range(5):
            f = fl.random_band_limited(g, 1, 10, rng)
            back = fl.inverse(fl.forward(f.data), g.n)
            worst = max(worst, float(np.abs(back - f.data).max()))
        return worst, 1e-14

    def derivative_exact():
        x1, x2, x3 = g.mesh()
        f = fl.PeriodicField(g, np.sin(3 * x1 + 2 * x3)[np.newaxis], 0)
        d = fl.spectral_derivative(f, 3).data[0]
        return float(np.abs(d - 2 * np.cos(3 * x1 + 2 * x3)).max()), 1e-12

    def product_dealiased():
        # band-limited product on 32 points vs. direct product on a grid that holds it exactly
        f = fl.random_band_limited(g, 0, 10, rng)
        h = fl.random_band_limited(g, 0, 10, rng)
        prod = fl.multiply_arrays(f.data, h.data)
        fine = fl.resample(f.data, 64) * fl.resample(h.data, 64)
        ref = fl.resample(fine, 32)
        return float(np.abs(prod - ref).max()), 1e-12

    def curl_div():
        f = fl.random_band_limited(g, 1, 8, rng)
        c = fl.curl(f)
        return _rel(fl.divergence(c).sup(), c.sup()), 1e-12

    def snapshot_roundtrip():
        f = fl.random_band_limited(g, 2, 6, rng)
        raw = fl.snapshot_bytes(f)
        import tempfile
        from pathlib import Path
        with tempfile.TemporaryDirectory() as d:
            p = fl.save_snapshot(f, Path(d) / "f.field")
            same = fl.snapshot_bytes(fl.load_snapshot(p)) == raw
        return (0.0 if same else 1.0), 0.0

    def holder_single_mode():
        x1 = g.mesh()[0]
        f = fl.PeriodicField(g, np.sin(4 * x1)[np.newaxis], 0)
        rep = fl.holder_norm(f, 1, 0.0)
        return abs(rep.value - 5.0), 1e-10  # ||sin 4x||_0 + ||4 cos 4x||_0

    rec.check("fft_roundtrip", roundtrip)
    rec.check("spectral_derivative_exact", derivative_exact)
    rec.check("product_dealiased", product_dealiased)
    rec.check("div_curl_zero_rel", curl_div)
    rec.check("snapshot_roundtrip", snapshot_roundtrip)
    rec.check("holder_c1_single_mode", holder_single_mode)
    return rec.results


# ---------------------------------------------------------------------------
# beltrami
# ---------------------------------------------------------------------------


def _random_amplitudes(modes, rng) -> dict:
    amp = {}
    for m in modes:
        if m.k in amp:
            continue
        a = complex(rng.standard_normal(), rng.standard_normal())
        amp[m.k] = a
        amp[tuple(-c for c in m.k)] = a.conjugate()
    return amp


def suite_beltrami(rng: np.random.Generator, lambda_bar_sq: int = 5) -> list[PropertyResult]:
    rec = _Recorder("beltrami")
    g = fl.Grid3(32)
    lam = 3
    fams = geo.default_families(lambda_bar_sq)
    modes = bt.build_modes(lambda_bar_sq, bt.sphere_points(lambda_bar_sq))
    amp = _random_amplitudes(modes, rng)
    W = bt.evaluate_beltrami(modes, amp, g, lam)
    w0 = W.sup()

    def div_free():
        return _rel(fl.divergence(W).sup(), w0), 1e-12

    def curl_eigen():
        return _rel((fl.curl(W) - W.scaled(lam * math.sqrt(lambda_bar_sq))).sup(),
                    lam * math.sqrt(lambda_bar_sq) * w0), 1e-12

    def self_interaction():
        WW = fl.product(W, W)
        grad = fl.gradient_field(fl.dot(W, W).scaled(0.5))
        return fl.divergence(WW).with_data(fl.divergence(WW).data - grad.data).sup() / w0 ** 2, 1e-10

    def average():
        WW = fl.product(W, W)
        avg = fl.sym_to_full(WW.mean().reshape(6, 1, 1, 1))[..., 0, 0, 0]
        ref = bt.beltrami_average(modes, amp)
        return float(np.abs(avg - ref).max()) / w0 ** 2, 1e-12

    def bk_identity():
        worst = 0.0
        for fam in fams.values():
            worst = max(worst, bt.check_bk_identity(bt.build_modes(lambda_bar_sq, fam)))
        return worst, 1e-12

    rec.check("div_W_rel", div_free)
    rec.check("curl_eigenfield_rel", curl_eigen)
    rec.check("self_interaction_gradient_rel", self_interaction)
    rec.check("average_closed_form_rel", average)
    rec.check("bk_pair_identity", bk_identity)
    return rec.results


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def suite_geometry(rng: np.random.Generator, lambda_bar_sq: int = 5,
                   solvers: dict | None = None) -> list[PropertyResult]:
    rec = _Recorder("geometry")
    if solvers is None:
        solvers = {name: geo.build_gamma_solver(fam, name=name)
                   for name, fam in geo.default_families(lambda_bar_sq).items()}

    def radius():
        r0 = min(s.r0 for s in solvers.values())
        return r0, 0.01, {name: s.r0 for name, s in solvers.items()}

    def reconstruction():
        worst = 0.0
        for s in solvers.values():
            for _ in range(100):
                E = rng.standard_normal(6)
                E /= float(fl.sym_opnorm(E.reshape(6, 1)).max())
                R6 = geo.IDENTITY6 + s.r0 * rng.uniform(0.0, 1.0) * E
                g = s.gamma_pairs(R6)
                back = s.reconstruct(g ** 2)
                worst = max(worst, float(np.abs(back - R6).max()))
        return worst, 1e-12

    def positivity():
        worst = math.inf
        for s in solvers.values():
            for _ in range(100):
                E = rng.standard_normal(6)
                E /= float(fl.sym_opnorm(E.reshape(6, 1)).max())
                c = s.c_values(geo.IDENTITY6 + s.r0 * E)
                worst = min(worst, float(c.min()))
        return worst, min(s.m0 for s in solvers.values()) * (1 - 1e-9), {}

    rec.check("certified_radius", radius, ">=")
    rec.check("reconstruction_residual", reconstruction)
    rec.check("coefficients_above_margin", positivity, ">=")
    return rec.results


# ---------------------------------------------------------------------------
# calculus
# ---------------------------------------------------------------------------


def suite_calculus(rng: np.random.Generator) -> list[PropertyResult]:
    rec = _Recorder("calculus")
    g = fl.Grid3(64)
    vs = [fl.random_band_limited(g, 1, 12, rng) for _ in range(20)]

    def inverse_divergence():
        worst = 0.0
        for v in vs:
            Rv = calc.inverse_divergence(v)
            d = fl.divergence(Rv).data
            ref = v.data - v.data.mean(axis=(1, 2, 3), keepdims=True)
            worst = max(worst, float(np.abs(d - ref).max()) / v.sup())
        return worst, 1e-11

    def trace_free():
        worst = 0.0
        for v in vs:
            Rv = calc.inverse_divergence(v)
            worst = max(worst, float(np.abs(fl.sym_trace(Rv.data)).max()) / Rv.sup())
        return worst, 1e-12

    def almost_inverse():
        return max(calc.almost_inverse_defect(v) / v.sup() for v in vs), 1e-11

    def leray():
        v = vs[0]
        P = calc.leray_project(v)
        PP = calc.leray_project(P)
        return max(_rel(fl.divergence(P).sup(), P.sup()), _rel((PP - P).sup(), P.sup())), 1e-12

    def cet():
        f = fl.random_band_limited(g, 0, 4, rng)
        h = fl.random_band_limited(g, 0, 4, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", calc.UnderResolvedWarning)
            rep = calc.cet_sweep(f, h, [1 / 8, 1 / 16, 1 / 32, 1 / 64], r=0)
        return rep.order, 1.9, {"values": rep.values}

    amp = fl.PeriodicField(g, np.exp(np.sin(g.mesh()[0]))[np.newaxis], 0)
    lams = [2, 4, 8, 16]

    def stationary(m):
        def fn():
            rep = calc.stationary_phase_integrals(amp, (1, 0, 0), lams)
            return rep.order, m - 0.1, {"values": rep.values, "truncated": rep.truncated}
        return fn

    def stationary_operator():
        x2 = g.mesh()[1]
        a = fl.PeriodicField(g, np.stack([np.zeros(g.shape), np.exp(np.sin(x2)), np.zeros(g.shape)]), 1)
        rep = calc.stationary_phase_operator(a, (1, 0, 0), lams, alpha=0.25)
        return rep.order, 1 - 0.25 - 0.1, {"values": rep.values}

    def br():
        x2 = g.mesh()[1]
        a = fl.PeriodicField(g, np.stack([np.ones(g.shape), np.zeros(g.shape), np.zeros(g.shape)]), 1)
        b = fl.PeriodicField(g, np.sin(x2)[np.newaxis], 0)
        rep = calc.br_commutator_decay(b, a, (1, 0, 0), lams, alpha=0.25)
        return rep.order, 2 - 0.25 - 0.1, {"values": rep.values}

    rec.check("inverse_divergence_rel", inverse_divergence)
    rec.check("inverse_divergence_trace_rel", trace_free)
    rec.check("almost_inverse_rel", almost_inverse)
    rec.check("leray_projection", leray)
    rec.check("cet_order", cet, ">=")
    for m in (1, 2, 3):
        rec.check(f"stationary_phase_order_m{m}", stationary(m), ">=")
    rec.check("stationary_phase_operator_order", stationary_operator, ">=")
    rec.check("br_commutator_order", br, ">=")
    return rec.results


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


def suite_transport(rng: np.random.Generator, instances: int = 10, n: int = 16,
                    mu: float = 8.0) -> list[PropertyResult]:
    rec = _Recorder("transport")
    g = fl.Grid3(n)
    x1, x2, _ = g.mesh()
    horizon = 1.0 / mu

    shear_box: dict = {}

    def shear_report():
        if "rep" not in shear_box:
            v = fl.PeriodicField(g, np.stack([np.sin(x2), np.zeros(g.shape), np.zeros(g.shape)]), 1)
            f0 = fl.PeriodicField(g, np.cos(x1)[np.newaxis], 0)
            shear_box["rep"] = tr.verify_transport_estimates(v, f0, None, horizon, n_times=4, mu=mu)
        return shear_box["rep"]

    def shear():
        rep = shear_report()
        err = 0.0
        for row, sol in zip(rep.rows, rep.solutions):
            exact = np.cos(x1 - row.t * np.sin(x2))
            err = max(err, float(np.abs(sol[0] - exact).max()))
        return err, 1e-8

    def shear_bounds():
        # without a source the maximum principle is an equality up to round-off
        rep = shear_report()
        return min(rep.min_margins.values()), -ROUNDOFF_MARGIN, rep.min_margins

    def random_bounds():
        worst = math.inf
        for _ in range(instances):
            v = fl.random_band_limited(g, 1, 2, rng)
            f0 = fl.random_band_limited(g, 0, 2, rng)
            src = fl.random_band_limited(g, 0, 2, rng)
            rep = tr.verify_transport_estimates(v, f0, src, horizon, n_times=4, mu=mu)
            worst = min(worst, min(rep.min_margins.values()))
        return worst, -ROUNDOFF_MARGIN

    rec.check("shear_closed_form", shear)
    rec.check("shear_bounds_margin", shear_bounds, ">=")
    rec.check("random_bounds_margin", random_bounds, ">=")
    return rec.results


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------


def suite_iteration(rng: np.random.Generator, grid: int = 64,
                    window: tuple[float, float] = (0.5, 0.5078125)) -> list[PropertyResult]:
    from ..iteration.cutoffs import CutoffFamily
    from ..iteration.driver import run_iteration
    from ..iteration.energy import EnergyProfile
    from ..iteration.schedule import ParamSchedule

    rec = _Recorder("iteration")

    def partition():
        fam = CutoffFamily(8)
        t = rng.uniform(0.0, 1.0, 500)
        return fam.partition_defect(t), 1e-14

    rec.check("cutoff_partition_of_unity", partition)
    schedule = ParamSchedule.relaxed([1.0, 0.25], [6], [8])
    res_box: dict = {}

    def run():
        res_box["r"] = run_iteration(schedule, EnergyProfile.constant(1.0), [grid], window,
                                     config={"doublesum": True})
        return 0.0, 0.0

    rec.check("stage1_completes", run)
    r = res_box.get("r")
    rows = r.rows if r is not None else []
    delta1 = schedule.delta[1]

    def col(name):
        return [row[name] for row in rows if not math.isnan(row[name])] or [math.nan]

    rec.check("div_v_rel", lambda: (max(col("div_v_rel")), 1e-10))
    rec.check("trace_rel", lambda: (max(col("R_trace_rel")), 1e-11))
    rec.check("w_o_bound_margin", lambda: (max(a / b for a, b in zip(col("w_o_sup"), col("w_o_bound"))), 1.0))
    rec.check("doublesum_residual", lambda: (max(col("doublesum_residual")), 1e-10 * delta1))
    rec.check("energy_w_o_gap_rel", lambda: (max(col("energy_w_o_gap_rel")), 0.1))
    rec.check("wc_form_gap_rel", lambda: (max(col("wc_form_gap_rel")), 1e-8))
    return rec.results


SUITE_FUNCTIONS: dict[str, Callable[[np.random.Generator], list[PropertyResult]]] = {
    "fields": suite_fields,
    "beltrami": suite_beltrami,
    "geometry": suite_geometry,
    "calculus": suite_calculus,
    "transport": suite_transport,
    "iteration": suite_iteration,
}


def run_suite(name: str, seed: int = 0) -> list[PropertyResult]:
    """Run one suite (or ``all``) with a generator seeded by ``seed``."""
    names = SUITES if name == "all" else (name,)
    unknown = [n for n in names if n not in SUITE_FUNCTIONS]
    if unknown:
        raise KeyError(f"unknown suite {unknown[0]!r}; choose from all, {', '.join(SUITES)}")
    out = []
    for i, n in enumerate(names):
        rng = np.random.default_rng([seed, i])
        out.extend(SUITE_FUNCTIONS[n](rng))
    return out


__all__ = ["PropertyResult", "SUITES", "run_suite", "suite_fields", "suite_beltrami",
           "suite_geometry", "suite_calculus", "suite_transport", "suite_iteration"]
