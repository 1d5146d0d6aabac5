"""Parameter sequences ``delta_q, lambda_q, mu_q, ell_q`` and their admissibility checks.

Two modes are supported:

* ``strict``: ``delta_q = a^{-b^q}``, ``lambda_q`` the smallest integer in
  ``[a^{c b^{q+1}}, 2 a^{c b^{q+1}}]``, ``mu_q`` and ``ell_q`` from the
  balancing formulas.  Values that overflow a double are kept as ``inf``.
* ``relaxed``: user-supplied sequences.  Every condition is still evaluated
  but reported as a warning instead of an error.

Indexing: the step from stage ``q`` to ``q + 1`` uses ``delta_q``,
``delta_{q+1}``, ``delta_{q+2}``, ``lambda_q``, ``lambda_{q+1}``, ``mu_q`` and
``ell_q``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

logger = logging.getLogger(__name__)

DEFAULT_B_RELAXED = 2.0


class ScheduleError(ValueError):
    """Inadmissible parameter sequence."""


def beta_from_b(b: float) -> float:
    """Exponent ``beta = (b - 1) / (5 b + 5)``."""
    return (b - 1.0) / (5.0 * b + 5.0)


def _safe_pow(base: float, expo: float) -> float:
    try:
        return float(base) ** float(expo)
    except OverflowError:
        return math.inf


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def mu_formula(d0: float, d1: float, l0: float, l1: float) -> float:
    """Balancing frequency ``delta_{q+1}^{1/4} delta_q^{1/4} lambda_q^{1/2} lambda_{q+1}^{1/2}``."""
    return _exp(0.25 * math.log(d1) + 0.25 * math.log(d0) + 0.5 * math.log(l0) + 0.5 * math.log(l1))


def ell_formula(d0: float, d1: float, l0: float, l1: float) -> float:
    """Mollification scale ``delta_{q+1}^{-1/8} delta_q^{1/8} lambda_q^{-1/4} lambda_{q+1}^{-3/4}``."""
    return _exp(-0.125 * math.log(d1) + 0.125 * math.log(d0) - 0.25 * math.log(l0)
                - 0.75 * math.log(l1))


@dataclass
class Check:
    """One inequality ``lhs <= rhs`` with its verdict."""

    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs * (1.0 + 1e-12))

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "passed": self.passed}


@dataclass
class ParamSchedule:
    """Parameter sequences for ``Q`` steps.

    ``delta`` holds ``delta_0 .. delta_{Q+1}``, ``lam`` holds
    ``lambda_0 .. lambda_Q``, ``mu`` and ``ell`` hold one value per step.
    """

    mode: str
    delta: list[float]
    lam: list[float]
    mu: list[int]
    ell: list[float]
    beta: float
    a: float | None = None
    b: float | None = None
    c: float | None = None
    eps: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def stages(self) -> int:
        return len(self.mu)

    # -- construction ------------------------------------------------------
    @classmethod
    def strict(cls, a: float, b: float, c: float, eps: float, stages: int) -> "ParamSchedule":
        if not (a > 1 and b > 1 and c > 2.5 and eps > 0):
            raise ScheduleError("strict mode needs a > 1, b > 1, c > 5/2 and eps > 0")
        la = math.log(a)
        delta = [_exp(-(b ** q) * la) for q in range(stages + 2)]
        lam = []
        for q in range(stages + 1):
            x = _exp(c * b ** (q + 1) * la)
            lam.append(float(math.ceil(x)) if math.isfinite(x) else math.inf)
        mu, ell = [], []
        for q in range(stages):
            m = mu_formula(delta[q], delta[q + 1], lam[q], lam[q + 1])
            mu.append(max(1, int(round(m))) if math.isfinite(m) else math.inf)
            ell.append(ell_formula(delta[q], delta[q + 1], lam[q], lam[q + 1]))
        return cls("strict", delta, lam, mu, ell, beta_from_b(b), a, b, c, eps)

    @classmethod
    def relaxed(cls, delta: Sequence[float], lam: Sequence[float], mu: Sequence[int],
                ell: Sequence[float] | None = None, delta0: float | None = None,
                lambda0: float | None = None, beta: float | None = None, b: float | None = None,
                eps: float = 0.0) -> "ParamSchedule":
        """User-supplied ``delta_1..``, ``lambda_1..`` and one ``mu`` per step."""
        stages = len(mu)
        if stages < 0 or len(lam) < stages:
            raise ScheduleError("one lambda per stage is required")
        if len(delta) < max(stages, 2):
            raise ScheduleError("at least two delta values (and one per stage) are required")
        if any(d <= 0 for d in delta) or any(x < 1 for x in lam):
            raise ScheduleError("delta must be positive and lambda >= 1")
        if any(int(x) != x for x in lam) or any(int(m) != m or m < 1 for m in mu):
            raise ScheduleError("lambda and mu must be positive integers")
        notes = []
        d = [float(x) for x in delta]
        d0 = float(delta0) if delta0 is not None else d[0] ** 2 / d[1]
        if delta0 is None:
            notes.append(f"delta_0 extrapolated as delta_1^2/delta_2 = {d0:.6g}")
        seq = [d0] + d
        while len(seq) < stages + 2:
            seq.append(seq[-1] ** 2 / seq[-2])
            notes.append(f"delta_{len(seq) - 1} extrapolated as {seq[-1]:.6g}")
        l0 = float(lambda0) if lambda0 is not None else 1.0
        lam_seq = [l0] + [float(x) for x in lam]
        if beta is None:
            bb = DEFAULT_B_RELAXED if b is None else float(b)
            beta = beta_from_b(bb)
            if b is None:
                notes.append(f"beta taken from b = {bb}")
        if ell is None:
            ells = [ell_formula(seq[q], seq[q + 1], lam_seq[q], lam_seq[q + 1]) for q in range(stages)]
        else:
            if len(ell) < stages:
                raise ScheduleError("one ell per stage is required")
            ells = [float(x) for x in ell[:stages]]
        return cls("relaxed", seq, lam_seq, [int(m) for m in mu], ells, float(beta), b=b,
                   eps=eps, notes=notes)

    # -- per-step parameters ----------------------------------------------
    def step(self, q: int) -> dict:
        return {"q": q, "delta_q": self.delta[q], "delta_q1": self.delta[q + 1],
                "delta_q2": self.delta[q + 2], "lambda_q": self.lam[q],
                "lambda_q1": self.lam[q + 1], "mu": self.mu[q], "ell": self.ell[q]}

    def conditions(self, q: int) -> list[Check]:
        """Scale-separation, ordering and monotonicity inequalities for step ``q``."""
        s = self.step(q)
        d0, d1, d2 = s["delta_q"], s["delta_q1"], s["delta_q2"]
        l0, l1, mu, ell = s["lambda_q"], s["lambda_q1"], s["mu"], s["ell"]
        r0, r1 = math.sqrt(d0), math.sqrt(d1)
        return [
            Check("amplitude_scale", r0 * l0 * ell / r1, 1.0),
            Check("transport_and_mollification", r0 * l0 / mu + 1.0 / (ell * l1), l1 ** (-self.beta)),
            Check("frequency_vs_mu", 1.0 / l1, r1 / mu),
            Check("order_mu_lower", 1.0 / (r1 * l1), 1.0 / mu),
            Check("order_mu_upper", 1.0 / mu, 1.0 / (r0 * l0)),
            Check("order_ell_lower", 1.0 / l1, ell),
            Check("order_ell_upper", ell, 1.0 / l0),
            Check("holder_monotone", r0 * l0 ** 0.2, r1 * l1 ** 0.2),
            Check("delta_decreasing", d1, d0),
            Check("delta_gap", d2, 0.5 * d1),
        ]

    def assert_conditions(self, q: int) -> list[Check]:
        """Evaluate the checks: errors in strict mode, warnings in relaxed mode.

        ``delta_{q+2} <= delta_{q+1} / 2`` is required in both modes.
        """
        checks = self.conditions(q)
        failed = [c for c in checks if not c.passed]
        for c in failed:
            msg = f"step {q}: condition {c.name} fails ({c.lhs:.4g} > {c.rhs:.4g})"
            if c.name == "delta_gap" or self.mode == "strict":
                raise ScheduleError(msg)
            logger.warning(msg)
        return checks

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = self.stages
        return d


__all__ = ["ParamSchedule", "Check", "ScheduleError", "beta_from_b", "mu_formula", "ell_formula"]
