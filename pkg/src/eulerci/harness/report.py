"""Human-readable summary of a diagnostics CSV."""

from __future__ import annotations

import math
from pathlib import Path

from .csvio import read_csv

#: (column, label, reduction) shown per stage; ``max``/``min`` skip NaN.
SUMMARY_COLUMNS = [
    ("w_o_sup", "||w_o||_0", "max"),
    ("w_o_bound", "M/2 delta^1/2", "min"),
    ("corrector_ratio", "||w_c||/||w_o||", "max"),
    ("R_sup", "||R||_0", "max"),
    ("div_v_rel", "div v (rel)", "max"),
    ("R_trace_rel", "tr R (rel)", "max"),
    ("alias_fraction", "alias fraction", "max"),
    ("energy_w_o_gap_rel", "energy gap w_o (rel)", "max"),
    ("er_residual_rel", "ER residual (rel)", "max"),
    ("dtw_fd_gap_rel", "D_t w FD gap (rel)", "max"),
    ("wc_form_gap_rel", "w_c form gap (rel)", "max"),
]


def _reduce(values, how):
    vals = [v for v in values if isinstance(v, (int, float)) and not math.isnan(v)]
    if not vals:
        return math.nan
    return max(vals) if how == "max" else min(vals)


def summarize(rows: list[dict]) -> dict[int, dict[str, float]]:
    stages = sorted({int(r["stage"]) for r in rows})
    out = {}
    for s in stages:
        sel = [r for r in rows if int(r["stage"]) == s]
        d = {"samples": len(sel), "t_min": min(r["t"] for r in sel), "t_max": max(r["t"] for r in sel),
             "grid_n": sel[0].get("grid_n")}
        for col, _, how in SUMMARY_COLUMNS:
            d[col] = _reduce([r.get(col) for r in sel], how)
        out[s] = d
    return out


def render_report(path: str | Path) -> str:
    meta, _, rows = read_csv(path)
    if not rows:
        return f"{path}: no diagnostics rows\n"
    summary = summarize(rows)
    stages = sorted(summary)
    label_w = max(len(lbl) for _, lbl, _ in SUMMARY_COLUMNS) + 2
    lines = [f"diagnostics: {path} (schema {meta.get('schema', '?')})"]
    lines.append("".ljust(label_w) + "".join(f"stage {s}".rjust(14) for s in stages))
    for key in ("samples", "grid_n", "t_min", "t_max"):
        lines.append(key.ljust(label_w) + "".join(f"{summary[s][key]:>14.6g}" for s in stages))
    for col, label, how in SUMMARY_COLUMNS:
        lines.append(f"{label} [{how}]".ljust(label_w + 6)[:label_w + 6]
                     + "".join(f"{summary[s][col]:>14.4e}" for s in stages)[0:])
    return "\n".join(lines) + "\n"


__all__ = ["render_report", "summarize", "SUMMARY_COLUMNS"]
