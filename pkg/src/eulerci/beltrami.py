"""Beltrami mode families on an integer sphere ``|k|^2 = lambda_bar^2``.

A mode ``k`` carries a real vector ``A_k`` orthogonal to ``k`` with
``|A_k| = 1/sqrt(2)`` and ``A_{-k} = A_k``, and the complex vector
``B_k = A_k + i (k/|k|) x A_k``.  Sums ``W = sum_k a_k B_k exp(i lam k.x)`` with
conjugate-symmetric amplitudes are real, divergence free and eigenfields of
curl with eigenvalue ``lam * lambda_bar``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .fields import Grid3, PeriodicField

DEFAULT_LAMBDA_BAR_SQ = 5


@dataclass(frozen=True)
class BeltramiMode:
    """One frequency ``k`` with its direction vectors ``A_k`` and ``B_k``."""

    k: tuple[int, int, int]
    A: np.ndarray
    B: np.ndarray

    @property
    def kvec(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.kvec))

    @property
    def khat(self) -> np.ndarray:
        return self.kvec / self.norm


def sphere_points(lambda_bar_sq: int) -> list[tuple[int, int, int]]:
    """All integer vectors with ``|k|^2 = lambda_bar_sq`` in lexicographic order."""
    r = int(np.floor(np.sqrt(lambda_bar_sq))) + 1
    pts = [k for k in itertools.product(range(-r, r + 1), repeat=3)
           if k[0] ** 2 + k[1] ** 2 + k[2] ** 2 == lambda_bar_sq]
    return sorted(pts)


def direction_vector(k: Sequence[int]) -> np.ndarray:
    """Deterministic ``A_k``: projection of ``e1`` or ``e2`` off ``k``, scaled to ``1/sqrt 2``.

    The coordinate vector whose projection orthogonal to ``k`` is longer is
    used (``e1`` on ties).  The projection is invariant under ``k -> -k``,
    which gives ``A_{-k} = A_k`` without a sign convention.
    """
    kv = np.asarray(k, dtype=float)
    khat = kv / np.linalg.norm(kv)
    i = 0 if k[0] ** 2 <= k[1] ** 2 else 1
    e = np.zeros(3)
    e[i] = 1.0
    proj = e - khat[i] * khat
    return proj / np.linalg.norm(proj) / np.sqrt(2.0)


def build_modes(lambda_bar_sq: int, frequencies: Sequence[Sequence[int]]) -> list[BeltramiMode]:
    """Beltrami modes for a negation-closed list of frequencies on one sphere."""
    if int(lambda_bar_sq) != lambda_bar_sq or lambda_bar_sq <= 0:
        raise ValueError("lambda_bar^2 must be a positive integer")
    keys = [tuple(int(c) for c in k) for k in frequencies]
    for k in keys:
        if sum(c * c for c in k) != lambda_bar_sq:
            raise ValueError(f"frequency {k} does not satisfy |k|^2 = {lambda_bar_sq}")
    kset = set(keys)
    for k in keys:
        if tuple(-c for c in k) not in kset:
            raise ValueError(f"frequency set is not closed under negation (missing -{k})")
    modes = []
    for k in keys:
        A = direction_vector(k)
        khat = np.asarray(k, dtype=float) / np.sqrt(lambda_bar_sq)
        B = A + 1j * np.cross(khat, A)
        A.setflags(write=False)
        B.setflags(write=False)
        modes.append(BeltramiMode(k, A, B))
    return modes


def _amplitude_lookup(modes: Sequence[BeltramiMode], amplitudes) -> dict:
    if isinstance(amplitudes, Mapping):
        amp = {tuple(k): complex(v) for k, v in amplitudes.items()}
    else:
        vals = list(amplitudes)
        if len(vals) != len(modes):
            raise ValueError("one amplitude per mode is required")
        amp = {m.k: complex(v) for m, v in zip(modes, vals)}
    return amp


def evaluate_beltrami(modes: Sequence[BeltramiMode], amplitudes, grid: Grid3,
                      frequency_scale: int = 1, time: float = 0.0) -> PeriodicField:
    """Real field ``W(x) = sum_k a_k B_k exp(i lam k.x)`` sampled on ``grid``.

    ``amplitudes`` is a sequence aligned with ``modes`` or a mapping from
    frequency tuples to complex values; missing frequencies count as zero.
    """
    lam = int(frequency_scale)
    if lam != frequency_scale or lam < 1:
        raise ValueError("frequency scale must be a positive integer")
    amp = _amplitude_lookup(modes, amplitudes)
    for k, a in amp.items():
        partner = amp.get(tuple(-c for c in k), 0.0)
        if abs(np.conj(a) - partner) > 1e-14 * max(1.0, abs(a)):
            raise ValueError(f"amplitudes break conjugate symmetry at k={k}")
    top = max((max(abs(c) for c in m.k) for m in modes), default=0) * lam
    if top >= grid.nyquist:
        raise ValueError(f"frequency {top} is not below the Nyquist limit {grid.nyquist}")
    x1, x2, x3 = grid.coords()
    out = np.zeros((3,) + grid.shape)
    done = set()
    for m in modes:
        a = amp.get(m.k, 0.0)
        if a == 0 or m.k in done:
            continue
        neg = tuple(-c for c in m.k)
        done.update({m.k, neg})
        phase = np.exp(1j * lam * (m.k[0] * x1 + m.k[1] * x2 + m.k[2] * x3))
        # a_k B_k e^{i.} + conj(a_k B_k e^{i.}) = 2 Re(a_k B_k e^{i.})
        for i in range(3):
            out[i] += 2.0 * np.real(a * m.B[i] * phase)
    return PeriodicField(grid, out, 1, time=time, name="W")


def beltrami_average(modes: Sequence[BeltramiMode], amplitudes) -> np.ndarray:
    """Closed-form average ``<W x W> = 1/2 sum_k |a_k|^2 (Id - khat x khat)``."""
    amp = _amplitude_lookup(modes, amplitudes)
    out = np.zeros((3, 3))
    for m in modes:
        a = amp.get(m.k, 0.0)
        out += 0.5 * abs(a) ** 2 * (np.eye(3) - np.outer(m.khat, m.khat))
    return out


def bk_identity_residual(m1: BeltramiMode, m2: BeltramiMode) -> float:
    """``|(B B' + B' B)(k+k') - (B . B')(k+k')|`` with the bilinear dot product."""
    s = m1.kvec + m2.kvec
    lhs = np.outer(m1.B, m2.B) @ s + np.outer(m2.B, m1.B) @ s
    rhs = (m1.B @ m2.B) * s
    return float(np.max(np.abs(lhs - rhs)))


def check_bk_identity(modes: Sequence[BeltramiMode]) -> float:
    """Largest residual of the symmetric ``B_k`` identity over all ordered pairs."""
    return max((bk_identity_residual(a, b) for a in modes for b in modes), default=0.0)


def mode_family_dict(lambda_bar_sq: int, families: Mapping[str, Sequence[BeltramiMode]]) -> dict:
    return {
        "lambda_bar_sq": int(lambda_bar_sq),
        "families": {
            name: [{"k": list(m.k), "A": [float(c) for c in m.A],
                    "B_real": [float(c) for c in m.B.real],
                    "B_imag": [float(c) for c in m.B.imag]} for m in ms]
            for name, ms in families.items()
        },
    }


def save_mode_family(path: str | Path, lambda_bar_sq: int,
                     families: Mapping[str, Sequence[BeltramiMode]]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(mode_family_dict(lambda_bar_sq, families), indent=2, sort_keys=True))
    return path


def load_mode_family(path: str | Path) -> tuple[int, dict[str, list[BeltramiMode]]]:
    raw = json.loads(Path(path).read_text())
    lb = int(raw["lambda_bar_sq"])
    fams = {name: build_modes(lb, [e["k"] for e in entries])
            for name, entries in raw["families"].items()}
    return lb, fams


__all__ = ["BeltramiMode", "build_modes", "evaluate_beltrami", "beltrami_average",
           "check_bk_identity", "bk_identity_residual", "sphere_points", "direction_vector",
           "save_mode_family", "load_mode_family", "mode_family_dict",
           "DEFAULT_LAMBDA_BAR_SQ"]
