"""Prescribed energy profiles ``e(t)`` as trigonometric polynomials in ``t``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DENSE_SAMPLES = 4097


@dataclass(frozen=True)
class EnergyProfile:
    """``e(t) = c0 + sum_j (a_j cos 2 pi j t + b_j sin 2 pi j t)``.

    ``coeffs = [c0, a1, b1, a2, b2, ...]``; the profile must stay positive
    on ``[0, 1]``.
    """

    coeffs: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(x) for x in self.coeffs)
        if len(c) == 0:
            raise ValueError("energy profile needs at least the constant coefficient")
        object.__setattr__(self, "coeffs", c)
        if self.min() <= 0:
            raise ValueError("energy profile must be positive on [0, 1]")

    @classmethod
    def constant(cls, value: float = 1.0) -> "EnergyProfile":
        return cls((float(value),))

    def _terms(self):
        c = self.coeffs
        for j in range(1, (len(c) - 1) // 2 + 1):
            yield j, c[2 * j - 1], c[2 * j] if 2 * j < len(c) else 0.0
        if len(c) % 2 == 0:  # trailing cosine coefficient without its sine partner
            j = len(c) // 2
            yield j, c[-1], 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.coeffs[0])
        for j, a, b in self._terms():
            out = out + a * np.cos(2 * np.pi * j * t) + b * np.sin(2 * np.pi * j * t)
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for j, a, b in self._terms():
            w = 2 * np.pi * j
            out = out - a * w * np.sin(w * t) + b * w * np.cos(w * t)
        return out if out.ndim else float(out)

    def _dense(self) -> np.ndarray:
        return np.asarray(self(np.linspace(0.0, 1.0, DENSE_SAMPLES)))

    def min(self) -> float:
        return float(self._dense().min())

    def max(self) -> float:
        return float(self._dense().max())

    def scaled(self, factor: float) -> "EnergyProfile":
        return EnergyProfile(tuple(factor * x for x in self.coeffs))

    @classmethod
    def from_list(cls, coeffs: Sequence[float]) -> "EnergyProfile":
        return cls(tuple(coeffs))


__all__ = ["EnergyProfile"]
