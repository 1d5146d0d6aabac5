"""Versioned diagnostics CSV.

Layout::

    # eulerci-diagnostics schema=1 kind=<kind>
    # units: <column>=<meaning>; ...
    # <optional extra header lines>
    col_a,col_b,...
    ...

Floats are written with ``repr`` (shortest round-trip form, ``nan``/``inf``
spelled out), so an identical computation produces a byte-identical file.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

CSV_SCHEMA = 1
MAGIC = "# eulerci-diagnostics"

#: Meaning/normalisation of the step diagnostics columns.  Norms follow the
#: usual Hölder notation: ``||f||_0`` is the sup of the pointwise (operator)
#: norm, ``||f||_1 = ||f||_0 + ||grad f||_0``.
UNITS = {
    "stage": "q+1",
    "t": "time",
    "grid_n": "output grid points per axis",
    "product_grid": "largest de-aliasing grid",
    "active_anchors": "cutoff indices l with chi_l(t) != 0",
    "rho_min": "min rho_l over active l", "rho_max": "max rho_l over active l",
    "w_o_sup": "||w_o||_0", "w_c_sup": "||w_c||_0", "w_sup": "||w||_0", "w_c1": "||w||_1",
    "corrector_ratio": "||w_c||_0/||w_o||_0",
    "w_o_bound": "M/2 delta_{q+1}^{1/2}", "w_bound_0": "M delta_{q+1}^{1/2}",
    "w_bound_1": "M delta_{q+1}^{1/2} lambda_{q+1}",
    "dp_sup": "||p_{q+1}-p_q||_0", "dp_c1": "||p_{q+1}-p_q||_1",
    "dp_bound_0": "M^2 delta_{q+1}", "dp_bound_1": "M^2 delta_{q+1} lambda_{q+1}",
    "R_sup": "||R_{q+1}||_0", "R_c1": "||R_{q+1}||_1",
    "R0_sup": "||R^0||_0", "R1_sup": "||R^1||_0", "R2_sup": "||R^2||_0",
    "R3_sup": "||R^3||_0", "R4_sup": "||R^4||_0", "R5_sup": "||R^5||_0",
    "R0_ratio": "||R^0||_0 / reference scale", "R1_ratio": "||R^1||_0 / reference scale",
    "R2_ratio": "||R^2||_0 / reference scale", "R3_ratio": "||R^3||_0 / reference scale",
    "R4_ratio": "||R^4||_0 / reference scale", "R5_ratio": "||R^5||_0 / reference scale",
    "R_trace_rel": "||tr R_{q+1}||_0 / max(||R_{q+1}||_0, ||w||_0^2)",
    "R_asym_rel": "asymmetry (zero: symmetric storage)",
    "div_v_rel": "||div v_{q+1}||_0 / ||v_{q+1}||_1",
    "alias_fraction": "spectral energy fraction of w, D_t w beyond 0.9 Nyquist",
    "p_shift": "mean removed from p_{q+1}",
    "energy_w_o": "integral |w_o|^2", "energy_bar": "3 (2 pi)^3 sum chi_l^2 rho_l",
    "energy_w_o_gap_rel": "|integral |w_o|^2 - energy_bar| / energy_bar",
    "energy_v": "integral |v_{q+1}|^2", "energy_target": "e(t)(1 - delta_{q+2})",
    "energy_gap": "|energy_target - energy_v|",
    "wc_form_gap_rel": "||w_c(curl form) - w_c(pointwise)||_0 / ||w||_0",
    "lform_gap_rel": "||w - w(L form)||_0 / ||w||_0",
    "doublesum_residual": "double-sum identity residual",
    "oscillation_rel": "relative size of the cancelled oscillation term",
    "v_c1": "||v_{q+1}||_1",
    "er_residual": "||Euler-Reynolds residual of stage q+1||_0 (centered d_t)",
    "er_residual_rel": "er_residual / ||v_{q+1}||_1",
    "dtw_fd_gap_rel": "||analytic D_t w - finite-difference D_t w||_0 / ||D_t w||_0",
    "DtR_sup": "||D_t R_{q+1}||_0 (centered d_t)",
}


def format_value(x) -> str:
    """Deterministic textual form: ``repr`` for floats, ``str`` otherwise."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(float(x))  # plain float repr, also for numpy float subclasses
    if x is None:
        return ""
    if hasattr(x, "item"):  # numpy scalars
        return format_value(x.item())
    return str(x)


def parse_value(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def render_csv(rows: Iterable[Mapping], columns: Sequence[str], kind: str = "step",
               extra_header: Sequence[str] = (), units: Mapping[str, str] | None = None) -> str:
    units = UNITS if units is None else units
    buf = io.StringIO()
    buf.write(f"{MAGIC} schema={CSV_SCHEMA} kind={kind}\n")
    described = [f"{c}={units[c]}" for c in columns if c in units]
    if described:
        buf.write("# units: " + "; ".join(described) + "\n")
    for line in extra_header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, rows: Iterable[Mapping], columns: Sequence[str], kind: str = "step",
              extra_header: Sequence[str] = (), units: Mapping[str, str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(rows, columns, kind, extra_header, units))
    return path


def read_csv(path: str | Path) -> tuple[dict, list[str], list[dict]]:
    """Return ``(meta, columns, rows)``; ``meta`` holds the schema line fields and comments."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise ValueError(f"{path}: not an eulerci diagnostics file")
    meta: dict = {"comments": []}
    for token in lines[0][len(MAGIC):].split():
        key, _, val = token.partition("=")
        meta[key] = val
    body = 1
    while body < len(lines) and lines[body].startswith("#"):
        meta["comments"].append(lines[body][1:].strip())
        body += 1
    reader = csv.reader(lines[body:])
    columns = next(reader)
    rows = [{c: parse_value(v) for c, v in zip(columns, rec)} for rec in reader]
    return meta, columns, rows


__all__ = ["CSV_SCHEMA", "UNITS", "render_csv", "write_csv", "read_csv", "format_value", "parse_value"]
