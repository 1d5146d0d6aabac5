"""Temporal partition of unity ``sum_l chi(mu t - l)^2 = 1``.

The profile is ``chi(x) = g(x) / sqrt(sum_l g(x - l)^2)`` where ``g`` is a
smooth bump equal to one on ``[-1/4, 1/4]`` and supported in ``(-3/4, 3/4)``,
built from the standard ``exp(-1/u)`` smooth step.  Derivatives are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORT = 0.75


def _h(u):
    u = np.asarray(u, dtype=float)
    pos = u > 0
    return np.where(pos, np.exp(-1.0 / np.where(pos, u, 1.0)), 0.0)


def _dh(u):
    u = np.asarray(u, dtype=float)
    pos = u > 0
    us = np.where(pos, u, 1.0)
    return np.where(pos, np.exp(-1.0 / us) / us ** 2, 0.0)


def smooth_step(u):
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``."""
    a, b = _h(u), _h(1.0 - np.asarray(u, dtype=float))
    return a / (a + b)


def smooth_step_derivative(u):
    u = np.asarray(u, dtype=float)
    a, b = _h(u), _h(1.0 - u)
    da, db = _dh(u), -_dh(1.0 - u)
    return (da * b - a * db) / (a + b) ** 2


def bump(x):
    """``g(x) = s(2 (3/4 - |x|))``: one on ``|x| <= 1/4``, zero for ``|x| >= 3/4``."""
    return smooth_step(2.0 * (SUPPORT - np.abs(np.asarray(x, dtype=float))))


def bump_derivative(x):
    x = np.asarray(x, dtype=float)
    return -2.0 * np.sign(x) * smooth_step_derivative(2.0 * (SUPPORT - np.abs(x)))


def _shifts(x):
    base = np.floor(x)
    return [base + j for j in (-1, 0, 1, 2)]


def chi(x):
    """Normalized profile with ``sum_l chi(x - l)^2 = 1``."""
    x = np.asarray(x, dtype=float)
    G = sum(bump(x - l) ** 2 for l in _shifts(x))
    return bump(x) / np.sqrt(G)


def chi_derivative(x):
    x = np.asarray(x, dtype=float)
    shifts = _shifts(x)
    G = sum(bump(x - l) ** 2 for l in shifts)
    dG = sum(2.0 * bump(x - l) * bump_derivative(x - l) for l in shifts)
    return bump_derivative(x) / np.sqrt(G) - 0.5 * bump(x) * dG / G ** 1.5


@dataclass(frozen=True)
class CutoffFamily:
    """Members ``chi_l(t) = chi(mu t - l)`` for integers ``0 <= l <= mu``."""

    mu: int

    def __post_init__(self):
        if int(self.mu) != self.mu or self.mu < 1:
            raise ValueError("mu must be a positive integer")

    @property
    def indices(self) -> range:
        return range(0, int(self.mu) + 1)

    def anchor(self, l: int) -> float:
        return l / self.mu

    def value(self, l: int, t):
        return chi(self.mu * np.asarray(t, dtype=float) - l)

    def derivative(self, l: int, t):
        return self.mu * chi_derivative(self.mu * np.asarray(t, dtype=float) - l)

    def active(self, t: float) -> list[int]:
        """Indices with ``chi_l(t) != 0`` (that is ``|mu t - l| < 3/4``)."""
        x = self.mu * t
        return [l for l in self.indices if abs(x - l) < SUPPORT and self.value(l, t) != 0.0]

    def partition_defect(self, ts) -> float:
        """``max |sum_l chi_l(t)^2 - 1|`` over sample times in ``[0, 1]``."""
        ts = np.asarray(ts, dtype=float)
        total = sum(self.value(l, ts) ** 2 for l in self.indices)
        return float(np.max(np.abs(total - 1.0)))


__all__ = ["CutoffFamily", "chi", "chi_derivative", "bump", "bump_derivative", "smooth_step",
           "smooth_step_derivative", "SUPPORT"]
