"""Positive decompositions of symmetric matrices near the identity.

For a family of integer frequencies ``Lambda_j`` (closed under negation) the
solver represents every symmetric matrix as

    R = 1/2 * sum_{k in Lambda_j} c_k(R) (Id - khat x khat),

with ``c_k = c_{-k}`` linear in ``R`` (the minimum-norm solution of the linear
system).  Positivity of ``c_k`` on a ball ``|R - Id| <= r0`` (operator norm) is
certified numerically, and ``gamma_k = sqrt(c_k)`` is smooth there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .beltrami import sphere_points
from .fields import SYM_INDEX, sym_opnorm

DEFAULT_MARGIN = 1e-3
MIN_RADIUS = 0.01
IDENTITY6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


class OutOfBallError(ValueError):
    """A matrix handed to the solver lies outside its certified ball."""

    def __init__(self, distance: float, radius: float, location=None):
        self.distance = float(distance)
        self.radius = float(radius)
        self.location = location
        where = "" if location is None else f" at index {location}"
        super().__init__(f"|R - Id| = {self.distance:.6g} exceeds certified radius "
                         f"{self.radius:.6g}{where}")


class FamilyRejected(ValueError):
    """The frequency family cannot support a certified decomposition."""


def default_families(lambda_bar_sq: int = 5) -> dict[str, list[tuple[int, int, int]]]:
    """Two disjoint negation-closed families on ``|k|^2 = 5`` with 6 pairs each.

    The ``even`` family uses the cyclic pattern ``(2, +-1, 0)`` and its cyclic
    shifts; the ``odd`` family the mirrored pattern ``(1, +-2, 0)``.
    """
    if lambda_bar_sq != 5:
        raise ValueError("default families are only tabulated for lambda_bar^2 = 5")
    even_reps = [(2, 1, 0), (2, -1, 0), (0, 2, 1), (0, 2, -1), (1, 0, 2), (-1, 0, 2)]
    odd_reps = [(1, 2, 0), (1, -2, 0), (0, 1, 2), (0, 1, -2), (2, 0, 1), (-2, 0, 1)]

    def close(reps):
        out = []
        for k in reps:
            out.append(k)
            out.append(tuple(-c for c in k))
        return out

    fams = {"even": close(even_reps), "odd": close(odd_reps)}
    allowed = set(sphere_points(lambda_bar_sq))
    assert all(set(f) <= allowed for f in fams.values())
    return fams


def pair_representatives(family: Sequence[Sequence[int]]) -> list[tuple[int, int, int]]:
    """One representative per ``+-k`` pair (first occurrence order)."""
    seen = set()
    reps = []
    for k in family:
        k = tuple(int(c) for c in k)
        neg = tuple(-c for c in k)
        if k in seen or neg in seen:
            continue
        seen.add(k)
        reps.append(k)
    return reps


def projector6(k: Sequence[int]) -> np.ndarray:
    """``Id - khat x khat`` in 6-component storage."""
    kv = np.asarray(k, dtype=float)
    kh = kv / np.linalg.norm(kv)
    m = np.eye(3) - np.outer(kh, kh)
    return np.array([m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]])


def functional_matrix(row: np.ndarray) -> np.ndarray:
    """Symmetric ``L`` with ``<L, R>_F = row . R6`` for 6-component storage."""
    L = np.zeros((3, 3))
    L[0, 0], L[1, 1], L[2, 2] = row[0], row[1], row[2]
    L[0, 1] = L[1, 0] = 0.5 * row[3]
    L[0, 2] = L[2, 0] = 0.5 * row[4]
    L[1, 2] = L[2, 1] = 0.5 * row[5]
    return L


def dual_opnorm(row: np.ndarray) -> float:
    """Norm of ``R -> row . R6`` with respect to the operator norm (trace norm of ``L``)."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(functional_matrix(row)))))


def sphere_directions(count_log2: int = 17, seed: int = 0) -> np.ndarray:
    """Symmetric unit-operator-norm directions from a scrambled Sobol sequence.

    Each 6-dimensional Sobol point gives a rotation (from three coordinates,
    via uniform quaternions) and an eigenvalue triple (from the other three).
    Every second point is pushed to an extreme point of the unit ball
    (eigenvalues +-1), where linear functionals attain their minimum; the
    others are generic sphere points rescaled so that ``max |eig| = 1``.
    Returns an array of shape ``(6, count)``.
    """
    pts = qmc.Sobol(d=6, scramble=True, seed=seed).random_base2(count_log2)
    u1, u2, u3 = pts[:, 0], pts[:, 1], pts[:, 2]
    # uniform random rotations (Shoemake)
    q = np.stack([np.sqrt(1 - u1) * np.sin(2 * np.pi * u2), np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
                  np.sqrt(u1) * np.sin(2 * np.pi * u3), np.sqrt(u1) * np.cos(2 * np.pi * u3)])
    x, y, z, w = q
    rot = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                    [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                    [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
    ev = 2.0 * pts[:, 3:6].T - 1.0
    extreme = np.arange(pts.shape[0]) % 2 == 0
    ev[:, extreme] = np.where(ev[:, extreme] >= 0, 1.0, -1.0)
    scale = np.max(np.abs(ev), axis=0)
    ev = ev / np.where(scale > 0, scale, 1.0)
    m = np.einsum("ian,an,jan->ijn", rot, ev, rot)
    return np.stack([m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]])


@dataclass
class GammaSolver:
    """Linear coefficient maps ``c_k`` for one family, with a certified radius.

    ``coeffs`` has one row per ``+-k`` pair (ordered as ``pairs``) acting on
    6-component symmetric storage: ``c_pair(R) = coeffs[p] . R6``.
    """

    pairs: list[tuple[int, int, int]]
    coeffs: np.ndarray
    r0: float
    m0: float
    dual_norms: np.ndarray
    r0_dual: float
    samples: int = 0
    name: str = ""
    bisection_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def frequencies(self) -> list[tuple[int, int, int]]:
        out = []
        for k in self.pairs:
            out.append(k)
            out.append(tuple(-c for c in k))
        return out

    @property
    def c_identity(self) -> np.ndarray:
        return self.coeffs @ IDENTITY6

    @property
    def lipschitz(self) -> np.ndarray:
        """Per-pair Lipschitz constants of ``gamma`` on the certified ball."""
        return self.dual_norms / (2.0 * np.sqrt(self.m0))

    def c_values(self, R6: np.ndarray) -> np.ndarray:
        """``c_pair`` for symmetric data ``(6, ...)``; result ``(P, ...)``."""
        R6 = np.asarray(R6, dtype=float)
        return np.tensordot(self.coeffs, R6, axes=(1, 0))

    def reconstruct(self, c: np.ndarray) -> np.ndarray:
        """``sum_p c_p (Id - khat khat)`` in 6-component storage."""
        P = np.stack([projector6(k) for k in self.pairs], axis=1)  # (6, P)
        return np.tensordot(P, c, axes=(1, 0))

    def distance_from_identity(self, R6: np.ndarray) -> np.ndarray:
        R6 = np.asarray(R6, dtype=float)
        shift = IDENTITY6.reshape((6,) + (1,) * (R6.ndim - 1))
        return sym_opnorm(R6 - shift)

    def gamma_pairs(self, R6: np.ndarray, check: bool = True, tol: float = 1e-12) -> np.ndarray:
        """``gamma_pair(R) = sqrt(c_pair(R))`` for data ``(6, ...)``, shape ``(P, ...)``."""
        R6 = np.asarray(R6, dtype=float)
        if check:
            dist = self.distance_from_identity(R6)
            worst = float(np.max(dist)) if dist.size else 0.0
            if worst > self.r0 * (1.0 + tol):
                loc = np.unravel_index(int(np.argmax(dist)), dist.shape) if dist.ndim else None
                raise OutOfBallError(worst, self.r0, loc)
        c = self.c_values(R6)
        return np.sqrt(np.maximum(c, 0.0))

    def to_dict(self) -> dict:
        return {"name": self.name, "pairs": [list(k) for k in self.pairs],
                "frequencies": [list(k) for k in self.frequencies],
                "coefficients": self.coeffs.tolist(), "component_order": ["11", "22", "33", "12", "13", "23"],
                "r0": self.r0, "m0": self.m0, "r0_dual": self.r0_dual,
                "dual_norms": self.dual_norms.tolist(), "samples": self.samples,
                "bisection_steps": self.bisection_steps}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "GammaSolver":
        return cls(pairs=[tuple(k) for k in d["pairs"]], coeffs=np.asarray(d["coefficients"]),
                   r0=float(d["r0"]), m0=float(d["m0"]), dual_norms=np.asarray(d["dual_norms"]),
                   r0_dual=float(d["r0_dual"]), samples=int(d.get("samples", 0)),
                   name=d.get("name", ""), bisection_steps=int(d.get("bisection_steps", 0)))

    @classmethod
    def load(cls, path: str | Path) -> "GammaSolver":
        return cls.from_dict(json.loads(Path(path).read_text()))


def gamma_eval(solver: GammaSolver, R: np.ndarray) -> dict[tuple[int, int, int], float]:
    """``gamma_k(R)`` for a single symmetric 3x3 matrix, keyed by frequency."""
    R = np.asarray(R, dtype=float)
    if R.shape == (3, 3):
        if not np.allclose(R, R.T, rtol=0, atol=1e-14 * max(1.0, np.abs(R).max())):
            raise ValueError("R must be symmetric")
        R6 = np.array([R[0, 0], R[1, 1], R[2, 2], R[0, 1], R[0, 2], R[1, 2]])
    elif R.shape == (6,):
        R6 = R
    else:
        raise ValueError("R must be a 3x3 matrix or 6-component symmetric vector")
    g = solver.gamma_pairs(R6)
    out = {}
    for p, k in enumerate(solver.pairs):
        out[k] = float(g[p])
        out[tuple(-c for c in k)] = float(g[p])
    return out


def build_gamma_solver(family: Sequence[Sequence[int]], m0: float = DEFAULT_MARGIN,
                       samples_log2: int = 17, seed: int = 0, name: str = "",
                       min_radius: float = MIN_RADIUS, bisection_tol: float = 1e-12) -> GammaSolver:
    """Minimum-norm linear decomposition and sampled certification of its radius.

    The radius is the largest ``r`` for which ``min_k c_k(Id + r E) >= m0`` over
    the sampled unit directions ``E``, found by bisection.  The exact value
    from the dual (trace) norm of each functional is kept alongside.
    """
    fam = [tuple(int(c) for c in k) for k in family]
    fset = set(fam)
    if any(tuple(-c for c in k) not in fset for k in fam):
        raise FamilyRejected("family is not closed under negation")
    pairs = pair_representatives(fam)
    G = np.stack([projector6(k) for k in pairs], axis=1)  # 6 x P
    if np.linalg.matrix_rank(G) < 6:
        raise FamilyRejected("projectors Id - khat khat do not span the symmetric matrices")
    coeffs = np.linalg.pinv(G)  # P x 6, minimum-norm solution operator
    c_id = coeffs @ IDENTITY6
    if np.any(c_id <= m0):
        raise FamilyRejected(f"identity coefficients {c_id} are not above the margin {m0}")

    dirs = sphere_directions(samples_log2, seed)
    slopes = (coeffs @ dirs).min(axis=1)  # worst directional slope per pair

    def worst(r: float) -> float:
        return float(np.min(c_id + r * slopes))

    lo, hi = 0.0, 1.0
    while worst(hi) >= m0 and hi < 1e6:
        lo, hi = hi, 2 * hi
    steps = 0
    while hi - lo > bisection_tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if worst(mid) >= m0:
            lo = mid
        else:
            hi = mid
        steps += 1
    r0 = lo
    dual = np.array([dual_opnorm(row) for row in coeffs])
    r0_dual = float(np.min((c_id - m0) / dual))
    if r0 < min_radius:
        raise FamilyRejected(f"certified radius {r0:.4g} below the threshold {min_radius}")
    return GammaSolver(pairs=pairs, coeffs=coeffs, r0=r0, m0=m0, dual_norms=dual,
                       r0_dual=r0_dual, samples=dirs.shape[1], name=name, bisection_steps=steps)


__all__ = ["GammaSolver", "build_gamma_solver", "gamma_eval", "OutOfBallError", "FamilyRejected",
           "default_families", "pair_representatives", "projector6", "dual_opnorm",
           "sphere_directions", "SYM_INDEX"]
