"""Periodic grid fields on the 3-torus and their spectral calculus.

Every field lives on a uniform ``N x N x N`` grid of ``[0, 2*pi)^3``.  Arrays are
stored row-major as ``[component, z, y, x]`` so that the x index runs fastest;
spatial axis ``a`` (1, 2, 3) therefore corresponds to numpy axis ``-a``.

Symmetric rank-2 tensors are stored as six independent components in the order
``(11, 22, 33, 12, 13, 23)``.

Spectral coefficients use the "forward" normalization: ``fhat[k]`` is the
Fourier coefficient ``(1/N^3) sum_x f(x) exp(-i k.x)`` and the inverse transform
is a plain sum.  With that convention resampling between grids needs no
rescaling.
"""

from __future__ import annotations

import functools
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft

logger = logging.getLogger(__name__)

SPATIAL_AXES = (-3, -2, -1)

# (i, j) index pairs of the stored symmetric components.
SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
SYM_NAMES = ("11", "22", "33", "12", "13", "23")
# full (i, j) -> storage slot
SYM_INDEX = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])

NCOMP = {0: 1, 1: 3, 2: 6}


class AliasingError(ValueError):
    """Raised when a field carries content the grid cannot represent faithfully."""


def fft_workers() -> int:
    """Number of FFT worker threads, capped by the ``CI_THREADS`` variable."""
    try:
        return max(1, int(os.environ.get("CI_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Low-level array transforms
# ---------------------------------------------------------------------------


def forward(a: np.ndarray) -> np.ndarray:
    """Fourier coefficients over the three trailing axes.

    Real input uses the half spectrum along x (the last axis); complex input
    the full spectrum.
    """
    if np.iscomplexobj(a):
        return sfft.fftn(a, axes=SPATIAL_AXES, norm="forward", workers=fft_workers())
    return sfft.rfftn(a, axes=SPATIAL_AXES, norm="forward", workers=fft_workers())


def inverse(ah: np.ndarray, n: int, real: bool = True) -> np.ndarray:
    """Grid samples from coefficients produced by :func:`forward`."""
    if real:
        return sfft.irfftn(ah, s=(n, n, n), axes=SPATIAL_AXES, norm="forward",
                           workers=fft_workers())
    return sfft.ifftn(ah, axes=SPATIAL_AXES, norm="forward", workers=fft_workers())


@functools.lru_cache(maxsize=32)
def wavenumbers(n: int, real: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer wavenumbers ``(k1, k2, k3)`` broadcastable against spectra.

    ``k1`` runs along the last (x) axis.  For real transforms it is the
    non-negative half spectrum.
    """
    full = np.fft.fftfreq(n, 1.0 / n)
    k1 = np.fft.rfftfreq(n, 1.0 / n) if real else full
    k1 = k1.reshape(1, 1, -1)
    k2 = full.reshape(1, -1, 1)
    k3 = full.reshape(-1, 1, 1)
    for k in (k1, k2, k3):
        k.setflags(write=False)
    return k1, k2, k3


def wavevector(n: int, axis: int, real: bool = True) -> np.ndarray:
    """Wavenumber array for spatial axis ``axis`` in 1..3."""
    return wavenumbers(n, real)[axis - 1]


@functools.lru_cache(maxsize=32)
def derivative_symbol(n: int, axis: int, real: bool = True) -> np.ndarray:
    """``i k_axis`` with the Nyquist frequency zeroed (odd-derivative convention)."""
    k = wavevector(n, axis, real).astype(float)
    k = np.where(np.abs(k) == n // 2, 0.0, k)
    sym = 1j * k
    sym.setflags(write=False)
    return sym


@functools.lru_cache(maxsize=16)
def ksquared(n: int, real: bool = True) -> np.ndarray:
    k1, k2, k3 = wavenumbers(n, real)
    out = (k1 ** 2 + k2 ** 2 + k3 ** 2).astype(float)
    out.setflags(write=False)
    return out


def spectral_band(ah: np.ndarray, n: int, real: bool = True, rel_tol: float = 1e-13) -> int:
    """Largest ``max_i |k_i|`` carrying a coefficient above ``rel_tol`` times the peak."""
    mag = np.abs(ah)
    while mag.ndim > 3:
        mag = mag.max(axis=0)
    peak = float(mag.max()) if mag.size else 0.0
    if peak == 0.0:
        return 0
    k1, k2, k3 = wavenumbers(n, real)
    kmax = np.maximum(np.maximum(np.abs(k1), np.abs(k2)), np.abs(k3))
    return int(kmax[mag > rel_tol * peak].max())


def high_band_fraction(ah: np.ndarray, n: int, real: bool = True, fraction: float = 0.9) -> float:
    """Share of spectral energy in modes with ``max_i |k_i| > fraction * N/2``."""
    k1, k2, k3 = wavenumbers(n, real)
    kmax = np.maximum(np.maximum(np.abs(k1), np.abs(k2)), np.abs(k3))
    power = np.abs(ah) ** 2
    if real:
        # half-spectrum bins other than k1 = 0 and Nyquist stand for two modes
        weight = np.full(k1.shape, 2.0)
        weight[..., 0] = 1.0
        if n % 2 == 0:
            weight[..., -1] = 1.0
        power = power * weight
    while power.ndim > 3:
        power = power.sum(axis=0)
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    return float(power[np.broadcast_to(kmax > fraction * n / 2, power.shape)].sum()) / total


def resample_hat(ah: np.ndarray, n_from: int, n_to: int, real: bool = True) -> np.ndarray:
    """Zero-pad or truncate spectral coefficients between grid sizes.

    Modes with ``|k_i| < min(n_from, n_to)/2`` are copied; Nyquist planes are
    dropped, so the operation is exact for fields band-limited below Nyquist.
    """
    if n_from == n_to:
        return ah.copy()
    lead = ah.shape[:-3]
    m = min(n_from, n_to) // 2  # copy |k| < m (for even sizes), i.e. |k| <= m-1
    if real:
        out = np.zeros(lead + (n_to, n_to, n_to // 2 + 1), dtype=ah.dtype)
    else:
        out = np.zeros(lead + (n_to, n_to, n_to), dtype=ah.dtype)
    pos = slice(0, m)
    neg_from = slice(n_from - (m - 1), n_from)
    neg_to = slice(n_to - (m - 1), n_to)
    # along x the real half spectrum only holds non-negative frequencies
    xs = [(pos, pos)] if real else [(pos, pos), (neg_from, neg_to)]
    for zf, zt in ((pos, pos), (neg_from, neg_to)):
        for yf, yt in ((pos, pos), (neg_from, neg_to)):
            for xf, xt in xs:
                out[..., zt, yt, xt] = ah[..., zf, yf, xf]
    return out


def resample(a: np.ndarray, n_to: int) -> np.ndarray:
    """Spectral (trigonometric) resampling of grid data to ``n_to`` points per axis."""
    n_from = a.shape[-1]
    if n_from == n_to:
        return a.copy()
    real = not np.iscomplexobj(a)
    return inverse(resample_hat(forward(a), n_from, n_to, real), n_to, real)


# ---------------------------------------------------------------------------
# Pointwise tensor helpers
# ---------------------------------------------------------------------------


def sym_to_full(s: np.ndarray) -> np.ndarray:
    """``(6, ...)`` symmetric storage to ``(3, 3, ...)``."""
    return s[SYM_INDEX]


def full_to_sym(m: np.ndarray) -> np.ndarray:
    """Symmetric part of a ``(3, 3, ...)`` array in 6-component storage."""
    out = np.empty((6,) + m.shape[2:], dtype=m.dtype)
    for slot, (i, j) in enumerate(SYM_PAIRS):
        out[slot] = m[i, i] if i == j else 0.5 * (m[i, j] + m[j, i])
    return out


def sym_trace(s: np.ndarray) -> np.ndarray:
    return s[0] + s[1] + s[2]


def sym_eigenvalues(s: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 matrices in 6-component storage.

    Closed-form trigonometric solution, vectorized over trailing axes; returns
    an array of shape ``(3, ...)`` sorted in decreasing order.
    """
    a11, a22, a33, a12, a13, a23 = (np.asarray(c, dtype=float) for c in s)
    q = (a11 + a22 + a33) / 3.0
    b11, b22, b33 = a11 - q, a22 - q, a33 - q
    p2 = (b11 ** 2 + b22 ** 2 + b33 ** 2 + 2.0 * (a12 ** 2 + a13 ** 2 + a23 ** 2)) / 6.0
    p = np.sqrt(p2)
    det = (b11 * (b22 * b33 - a23 ** 2) - a12 * (a12 * b33 - a23 * a13)
           + a13 * (a12 * a23 - b22 * a13))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(p > 0, det / (2.0 * np.where(p > 0, p, 1.0) ** 3), 0.0)
    r = np.clip(r, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.stack([e1, e2, e3])


def sym_opnorm(s: np.ndarray) -> np.ndarray:
    """Pointwise operator norm of symmetric tensors in 6-component storage."""
    ev = sym_eigenvalues(s)
    return np.max(np.abs(ev), axis=0)


def matrix_opnorm(m: np.ndarray) -> np.ndarray:
    """Pointwise operator (spectral) norm of general ``(3, 3, ...)`` arrays."""
    mtm = np.einsum("ki...,kj...->ij...", m, m)
    ev = sym_eigenvalues(full_to_sym(mtm))
    return np.sqrt(np.maximum(ev[0], 0.0))


def pointwise_norm(data: np.ndarray, rank: int) -> np.ndarray:
    """Pointwise size: absolute value, Euclidean length or operator norm.

    ``data`` has the component axis first.  Rank-2 data with 6 components is
    treated as symmetric; with 9 components (``(3, 3, ...)`` flattened) as a
    general matrix.  Complex data uses the modulus (Euclidean/Frobenius).
    """
    if np.iscomplexobj(data):
        return np.sqrt(np.sum(np.abs(data) ** 2, axis=0))
    if rank == 0:
        return np.abs(data[0] if data.shape[0] == 1 else data)
    if rank == 1:
        return np.sqrt(np.einsum("i...,i...->...", data, data))
    if data.shape[0] == 6:
        return sym_opnorm(data)
    if data.shape[0] == 9:
        return matrix_opnorm(data.reshape((3, 3) + data.shape[1:]))
    raise ValueError(f"unsupported rank-2 component count {data.shape[0]}")


# ---------------------------------------------------------------------------
# Grid and field types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid3:
    """Uniform grid of the 3-torus with ``n`` nodes per axis."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n <= 0 or self.n % 2:
            raise ValueError(f"grid resolution must be a positive even integer, got {self.n!r}")

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def nyquist(self) -> int:
        return self.n // 2

    def axis_coords(self) -> np.ndarray:
        return self.spacing * np.arange(self.n)

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable node coordinates ``(x1, x2, x3)``."""
        x = self.axis_coords()
        return x.reshape(1, 1, -1), x.reshape(1, -1, 1), x.reshape(-1, 1, 1)

    def mesh(self) -> np.ndarray:
        """Dense node coordinates, shape ``(3, n, n, n)``."""
        x1, x2, x3 = self.coords()
        return np.stack(np.broadcast_arrays(x1, x2, x3)).astype(float)


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Scalar, vector or symmetric-tensor samples on a :class:`Grid3`.

    ``data`` has shape ``(ncomp, n, n, n)`` with ``ncomp`` 1, 3 or 6 for rank
    0, 1 or 2.  Complex data is allowed for intermediate oscillatory objects.
    """

    grid: Grid3
    data: np.ndarray
    rank: int
    time: float = 0.0
    trace_free: bool = False
    name: str = ""

    def __post_init__(self):
        if self.rank not in NCOMP:
            raise ValueError(f"rank must be 0, 1 or 2, got {self.rank}")
        data = np.asarray(self.data)
        if data.ndim == 3 and self.rank == 0:
            data = data[np.newaxis]
        expected = (NCOMP[self.rank],) + self.grid.shape
        if data.shape != expected:
            raise ValueError(f"data shape {data.shape} does not match {expected}")
        if not np.iscomplexobj(data):
            data = data.astype(np.float64, copy=False)
        object.__setattr__(self, "data", data)

    # constructors ---------------------------------------------------------

    @classmethod
    def zeros(cls, grid: Grid3, rank: int, **kw) -> "PeriodicField":
        return cls(grid, np.zeros((NCOMP[rank],) + grid.shape), rank, **kw)

    @classmethod
    def from_function(cls, grid: Grid3, func, rank: int, **kw) -> "PeriodicField":
        """Sample ``func(x1, x2, x3)`` (returning a sequence of components)."""
        x1, x2, x3 = grid.mesh()
        vals = func(x1, x2, x3)
        if rank == 0:
            vals = [vals]
        data = np.stack([np.broadcast_to(np.asarray(v, dtype=float), grid.shape) for v in vals])
        return cls(grid, data, rank, **kw)

    def with_data(self, data: np.ndarray, rank: int | None = None, **kw) -> "PeriodicField":
        opts = dict(time=self.time, trace_free=False, name=self.name)
        opts.update(kw)
        return PeriodicField(self.grid, data, self.rank if rank is None else rank, **opts)

    # spectral view --------------------------------------------------------

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.data)

    @functools.cached_property
    def hat(self) -> np.ndarray:
        """Fourier coefficients (forward-normalized)."""
        return forward(self.data)

    def mean(self) -> np.ndarray:
        return self.data.mean(axis=(-3, -2, -1))

    def sup(self) -> float:
        """Sup over nodes of the pointwise norm."""
        return float(pointwise_norm(self.data, self.rank).max())

    def band(self, rel_tol: float = 1e-13) -> int:
        return spectral_band(self.hat, self.grid.n, self.is_real, rel_tol)

    def full_matrix(self) -> np.ndarray:
        if self.rank != 2:
            raise ValueError("full_matrix requires a rank-2 field")
        return sym_to_full(self.data)

    def resampled(self, n: int) -> "PeriodicField":
        g = Grid3(n)
        return PeriodicField(g, inverse(resample_hat(self.hat, self.grid.n, n, self.is_real), n,
                                        self.is_real),
                             self.rank, time=self.time, trace_free=self.trace_free, name=self.name)

    def __add__(self, other: "PeriodicField") -> "PeriodicField":
        _check_compatible(self, other)
        return self.with_data(self.data + other.data,
                              trace_free=self.trace_free and other.trace_free)

    def __sub__(self, other: "PeriodicField") -> "PeriodicField":
        _check_compatible(self, other)
        return self.with_data(self.data - other.data,
                              trace_free=self.trace_free and other.trace_free)

    def scaled(self, c: float) -> "PeriodicField":
        return self.with_data(c * self.data, trace_free=self.trace_free)


def _check_compatible(f: PeriodicField, g: PeriodicField):
    if f.grid != g.grid or f.rank != g.rank:
        raise ValueError("fields live on different grids or have different ranks")


# ---------------------------------------------------------------------------
# Differential operators
# ---------------------------------------------------------------------------


def _nyquist_content(ah: np.ndarray, n: int, axis: int, real: bool) -> float:
    k = wavevector(n, axis, real)
    mask = np.broadcast_to(np.abs(k) == n // 2, ah.shape[-3:])
    mag = np.abs(ah)
    peak = float(mag.max()) if mag.size else 0.0
    if peak == 0.0:
        return 0.0
    return float(mag[..., mask].max()) / peak if mask.any() else 0.0


def check_resolved(f: PeriodicField, axes: Sequence[int] = (1, 2, 3), tol: float = 1e-10):
    """Raise :class:`AliasingError` when ``f`` has content at the Nyquist frequency."""
    for axis in axes:
        frac = _nyquist_content(f.hat, f.grid.n, axis, f.is_real)
        if frac > tol:
            raise AliasingError(
                f"field {f.name!r} has relative Nyquist content {frac:.2e} along axis {axis}; "
                f"grid N={f.grid.n} is too coarse for its band")


def derivative_hat(ah: np.ndarray, n: int, axis: int, real: bool = True) -> np.ndarray:
    return derivative_symbol(n, axis, real) * ah


def spectral_derivative(f: PeriodicField, axis: int, check: bool = True) -> PeriodicField:
    """Exact derivative ``d/dx_axis`` of the trigonometric interpolant of ``f``."""
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    if check:
        check_resolved(f, (axis,))
    n = f.grid.n
    data = inverse(derivative_hat(f.hat, n, axis, f.is_real), n, f.is_real)
    return f.with_data(data, trace_free=f.trace_free)


def gradient(f: PeriodicField, check: bool = True) -> np.ndarray:
    """Array ``(3, ncomp, n, n, n)`` with ``out[j] = d f / d x_{j+1}``."""
    if check:
        check_resolved(f)
    n = f.grid.n
    return np.stack([inverse(derivative_hat(f.hat, n, a, f.is_real), n, f.is_real)
                     for a in (1, 2, 3)])


def gradient_field(f: PeriodicField, check: bool = True) -> PeriodicField:
    """Gradient of a scalar field as a vector field."""
    if f.rank != 0:
        raise ValueError("gradient_field expects a scalar field")
    return PeriodicField(f.grid, gradient(f, check)[:, 0], 1, time=f.time, name=f"grad {f.name}")


def divergence_hat(ah: np.ndarray, n: int, rank: int, real: bool = True) -> np.ndarray:
    """Spectral divergence; rank-2 input in 6-component storage gives ``d_j T_ij``."""
    d = [derivative_symbol(n, a, real) for a in (1, 2, 3)]
    if rank == 1:
        return (d[0] * ah[0] + d[1] * ah[1] + d[2] * ah[2])[np.newaxis]
    if rank == 2:
        out = []
        for i in range(3):
            out.append(sum(d[j] * ah[SYM_INDEX[i, j]] for j in range(3)))
        return np.stack(out)
    raise ValueError("divergence needs a rank 1 or rank 2 field")


def divergence(f: PeriodicField, check: bool = True) -> PeriodicField:
    """Divergence of a vector field, or row-wise divergence of a symmetric tensor."""
    if f.rank not in (1, 2):
        raise ValueError("divergence needs a rank 1 or rank 2 field")
    if check:
        check_resolved(f)
    n = f.grid.n
    data = inverse(divergence_hat(f.hat, n, f.rank, f.is_real), n, f.is_real)
    return PeriodicField(f.grid, data, f.rank - 1, time=f.time, name=f"div {f.name}")


def curl(f: PeriodicField, check: bool = True) -> PeriodicField:
    if f.rank != 1:
        raise ValueError("curl needs a vector field")
    if check:
        check_resolved(f)
    n, real = f.grid.n, f.is_real
    d = [derivative_symbol(n, a, real) for a in (1, 2, 3)]
    h = f.hat
    ch = np.stack([d[1] * h[2] - d[2] * h[1], d[2] * h[0] - d[0] * h[2], d[0] * h[1] - d[1] * h[0]])
    return f.with_data(inverse(ch, n, real))


def laplacian(f: PeriodicField) -> PeriodicField:
    n = f.grid.n
    return f.with_data(inverse(-ksquared(n, f.is_real) * f.hat, n, f.is_real))


def inverse_laplacian_hat(ah: np.ndarray, n: int, real: bool = True) -> np.ndarray:
    """Mean-zero solution of ``Delta u = f - mean(f)`` in spectral form."""
    k2 = ksquared(n, real)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(k2 > 0, -1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    return ah * inv


# ---------------------------------------------------------------------------
# De-aliased products
# ---------------------------------------------------------------------------


_FFT_FRIENDLY = sorted({2 ** a * 3 ** b * 5 ** c for a in range(1, 12) for b in range(4)
                        for c in range(3) if 2 ** a * 3 ** b * 5 ** c <= 4096})


def friendly_size(n_min: int) -> int:
    """Smallest even FFT-friendly size (2^a 3^b 5^c) not below ``n_min``."""
    for m in _FFT_FRIENDLY:
        if m >= n_min:
            return m
    return n_min + (n_min % 2)


def product_grid(n: int, band_a: int, band_b: int) -> int:
    """Grid size on which a product exactly reproduces the ``n``-grid band.

    A product of operands with bands ``band_a``, ``band_b`` contains frequencies
    up to ``band_a + band_b``; sampling it on ``M`` points leaves modes
    ``|k| <= n/2`` (Nyquist included) free of aliases whenever
    ``M > band_a + band_b + n/2``.
    """
    need = band_a + band_b + n // 2 + 1
    return n if need <= n else friendly_size(need)


def multiply_arrays(a: np.ndarray, b: np.ndarray, band_a: int | None = None,
                    band_b: int | None = None, contraction: str | None = None) -> np.ndarray:
    """De-aliased pointwise product of grid arrays sharing trailing shape.

    ``contraction`` is an ``einsum`` signature applied pointwise (default:
    elementwise product with broadcasting over leading axes).  When the
    summed band exceeds what the grid represents, operands are spectrally
    upsampled, multiplied and projected back.
    """
    n = a.shape[-1]
    real = not (np.iscomplexobj(a) or np.iscomplexobj(b))
    if band_a is None:
        band_a = spectral_band(forward(a), n, not np.iscomplexobj(a))
    if band_b is None:
        band_b = spectral_band(forward(b), n, not np.iscomplexobj(b))
    m = product_grid(n, band_a, band_b)
    op = (lambda x, y: x * y) if contraction is None else (
        lambda x, y: np.einsum(contraction, x, y))
    if m == n:
        return op(a, b)
    au, bu = resample(a, m), resample(b, m)
    return inverse(resample_hat(forward(op(au, bu)), m, n, real), n, real)


def product(f: PeriodicField, g: PeriodicField, out_grid: Grid3 | None = None) -> PeriodicField:
    """De-aliased product of fields.

    Scalar times anything scales componentwise; vector times vector gives the
    symmetrized outer product ``(f x g + g x f)/2`` in symmetric storage (equal
    to ``f x f`` for ``f is g``).  ``out_grid`` may enlarge the result grid so
    that no content is discarded.
    """
    if f.grid != g.grid:
        raise ValueError("operands must share a grid")
    if out_grid is not None and out_grid.n != f.grid.n:
        f, g = f.resampled(out_grid.n), g.resampled(out_grid.n)
    ba, bb = f.band(), g.band()
    if f.rank == 0 or g.rank == 0:
        s, o = (f, g) if f.rank == 0 else (g, f)
        data = multiply_arrays(s.data[0][np.newaxis], o.data, ba, bb)
        return PeriodicField(f.grid, data, o.rank, time=f.time)
    if f.rank == 1 and g.rank == 1:
        comps = []
        for i, j in SYM_PAIRS:
            if i == j:
                comps.append(multiply_arrays(f.data[i], g.data[j], ba, bb))
            else:
                comps.append(0.5 * (multiply_arrays(f.data[i], g.data[j], ba, bb)
                                    + multiply_arrays(f.data[j], g.data[i], ba, bb)))
        return PeriodicField(f.grid, np.stack(comps), 2, time=f.time)
    raise ValueError("unsupported operand ranks for product")


def dot(f: PeriodicField, g: PeriodicField) -> PeriodicField:
    """De-aliased pointwise inner product of vector fields."""
    if f.rank != 1 or g.rank != 1:
        raise ValueError("dot expects vector fields")
    ba, bb = f.band(), g.band()
    data = sum(multiply_arrays(f.data[i], g.data[i], ba, bb) for i in range(3))
    return PeriodicField(f.grid, data[np.newaxis], 0, time=f.time)


# ---------------------------------------------------------------------------
# Hölder norms
# ---------------------------------------------------------------------------


def multi_indices(order: int) -> list[tuple[int, int, int]]:
    """All ``beta = (b1, b2, b3)`` with ``|beta| = order`` in a fixed order."""
    out = []
    for b1 in range(order, -1, -1):
        for b2 in range(order - b1, -1, -1):
            out.append((b1, b2, order - b1 - b2))
    return out


def _derivative_data(ah: np.ndarray, n: int, beta: tuple[int, int, int], real: bool) -> np.ndarray:
    sym = 1.0
    for axis, power in zip((1, 2, 3), beta):
        if power:
            sym = sym * derivative_symbol(n, axis, real) ** power
    return inverse(sym * ah, n, real)


@dataclass
class HolderNormReport:
    """Estimated Hölder norm ``||f||_{N+alpha}`` and its pieces."""

    order: int
    alpha: float
    value: float
    seminorm: float
    seminorms: list[float]
    separations: list[float] = field(default_factory=list)
    grid_n: int = 0

    def to_dict(self) -> dict:
        return {"order": self.order, "alpha": self.alpha, "value": self.value,
                "seminorm": self.seminorm, "seminorms": list(self.seminorms),
                "separations": list(self.separations), "grid_n": self.grid_n}


def holder_seminorm_data(data: np.ndarray, rank: int, alpha: float,
                         spacing: float) -> tuple[float, list[float]]:
    """Difference-quotient estimate of ``[g]_alpha`` for grid data ``g``.

    Pairs of nodes separated by ``m`` cells along one axis are compared for
    ``m = 1, 2, 4, ..., n/2``.
    """
    n = data.shape[-1]
    best = 0.0
    seps = []
    m = 1
    while m <= n // 2:
        s = m * spacing
        seps.append(s)
        for ax in SPATIAL_AXES:
            diff = np.roll(data, -m, axis=ax) - data
            best = max(best, float(pointwise_norm(diff, rank).max()) / s ** alpha)
        m *= 2
    return best, seps


def holder_norm(f: PeriodicField, order: int, alpha: float = 0.0, check: bool = True) -> HolderNormReport:
    """Estimate ``||f||_{order+alpha}`` from grid samples.

    ``[f]_j`` is the maximum over ``|beta| = j`` of the sup of ``|D^beta f|``
    (exact spectral derivatives).  For ``alpha > 0`` the Hölder part is a lower
    bound from axis-aligned node pairs.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if check and order > 0:
        check_resolved(f)
    n, real = f.grid.n, f.is_real
    ah = f.hat
    semis = []
    top_data = []
    for j in range(order + 1):
        best = 0.0
        for beta in multi_indices(j):
            d = f.data if j == 0 else _derivative_data(ah, n, beta, real)
            best = max(best, float(pointwise_norm(d, f.rank).max()))
            if j == order and alpha > 0:
                top_data.append(d)
        semis.append(best)
    seps: list[float] = []
    if alpha > 0:
        top = 0.0
        for d in top_data:
            val, seps = holder_seminorm_data(d, f.rank, alpha, f.grid.spacing)
            top = max(top, val)
        value = sum(semis) + top
        seminorm = top
    else:
        value = sum(semis)
        seminorm = semis[order]
    return HolderNormReport(order, alpha, value, seminorm, semis, seps, n)


def sup_norm(f: PeriodicField) -> float:
    return f.sup()


def c1_norm(f: PeriodicField) -> float:
    """``||f||_1 = ||f||_0 + [f]_1``."""
    return holder_norm(f, 1, 0.0, check=False).value


# ---------------------------------------------------------------------------
# Snapshot I/O
# ---------------------------------------------------------------------------

COMPONENT_NAMES = {0: ["s"], 1: ["1", "2", "3"], 2: list(SYM_NAMES)}


def snapshot_bytes(f: PeriodicField) -> bytes:
    if not f.is_real:
        raise ValueError("only real fields can be saved as snapshots")
    header = {"name": f.name, "rank": f.rank, "N": f.grid.n, "time": float(f.time),
              "trace_free": bool(f.trace_free), "components": COMPONENT_NAMES[f.rank],
              "dtype": "<f8", "layout": "component,z,y,x"}
    head = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    return head + np.ascontiguousarray(f.data, dtype="<f8").tobytes()


def save_snapshot(f: PeriodicField, path: str | Path) -> Path:
    """Write a field as a JSON header line followed by little-endian float64 data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(snapshot_bytes(f))
    return path


def load_snapshot(path: str | Path) -> PeriodicField:
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    header = json.loads(raw[:cut].decode("utf-8"))
    n, rank = int(header["N"]), int(header["rank"])
    count = NCOMP[rank] * n ** 3
    payload = raw[cut + 1:]
    if len(payload) != 8 * count:
        raise ValueError(f"snapshot payload has {len(payload)} bytes, expected {8 * count}")
    data = np.frombuffer(payload, dtype="<f8").reshape((NCOMP[rank], n, n, n)).astype(np.float64)
    return PeriodicField(Grid3(n), data, rank, time=float(header["time"]),
                         trace_free=bool(header["trace_free"]), name=str(header["name"]))


def random_band_limited(grid: Grid3, rank: int, band: int, rng: np.random.Generator,
                        decay: float = 0.0, mean_zero: bool = False) -> PeriodicField:
    """Random real field whose modes satisfy ``max_i |k_i| <= band``.

    Coefficients are Gaussian, optionally damped by ``(1+|k|^2)^(-decay/2)``.
    """
    n = grid.n
    if band >= n // 2:
        raise ValueError("band must stay below Nyquist")
    k1, k2, k3 = wavenumbers(n, True)
    kmax = np.maximum(np.maximum(np.abs(k1), np.abs(k2)), np.abs(k3))
    mask = (kmax <= band).astype(float)
    if decay:
        mask = mask * (1.0 + ksquared(n, True)) ** (-decay / 2.0)
    shape = (NCOMP[rank],) + (n, n, n // 2 + 1)
    ah = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * mask
    if mean_zero:
        ah[..., 0, 0, 0] = 0.0
    data = inverse(ah, n, True)
    data /= max(np.abs(data).max(), 1e-300)
    return PeriodicField(grid, data, rank)
