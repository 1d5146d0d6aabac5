"""Numerical convex-integration iteration for the incompressible Euler equations on the 3-torus.

Subpackages and modules:

* :mod:`eulerci.fields` - periodic fields, spectral calculus, Hölder norms, snapshots
* :mod:`eulerci.beltrami` - Beltrami modes and their identities
* :mod:`eulerci.geometry` - decomposition of matrices near the identity
* :mod:`eulerci.calculus` - inverse divergence, Leray projection, mollification, decay sweeps
* :mod:`eulerci.transport` - flow maps and transport along the mollified velocity
* :mod:`eulerci.iteration` - the step ``(v_q, p_q, R_q) -> (v_{q+1}, p_{q+1}, R_{q+1})``
* :mod:`eulerci.harness` - configuration, CLI, persistence and verification suites
"""

__version__ = "0.1.0"

from . import beltrami, calculus, fields, geometry, transport  # noqa: F401

__all__ = ["fields", "beltrami", "geometry", "calculus", "transport", "iteration", "harness",
           "__version__"]
