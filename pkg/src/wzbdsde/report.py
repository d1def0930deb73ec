"""CSV, JSON and SVG renderings of experiment reports.

Floats are written with ``repr`` (shortest round-trip decimal) so equal
reports always serialize to equal bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from typing import Optional

from .lab import ConvergenceReport, IdentityReport, MomentReport

ERROR_HEADER = [
    "n", "m", "outer", "inner", "sup_y_err2", "sup_y_err2_se",
    "z_err_int", "z_err_int_se", "slope", "seed",
]
IDENTITY_HEADER = ["n", "identity", "estimate", "se", "z", "passed", "trivial", "control", "seed"]
MOMENT_HEADER = [
    "n", "p", "y_sup_moment", "y_sup_moment_se", "z_int_moment", "z_int_moment_se",
    "combined", "ratio", "uniform", "seed",
]


def fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _table(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def errors_csv(report: ConvergenceReport) -> str:
    rows = [
        (lv.n, lv.m, report.outer, report.inner, lv.sup_y_err2, lv.sup_y_err2_se,
         lv.z_err_int, lv.z_err_int_se, report.slope, report.seed)
        for lv in report.levels
    ]
    return _table(ERROR_HEADER, rows)


def identities_csv(report: IdentityReport) -> str:
    rows = [
        (e.n, e.name, e.estimate, e.se, e.z, e.passed, e.trivial, e.control, report.seed)
        for e in report.entries
    ]
    return _table(IDENTITY_HEADER, rows)


def moments_csv(report: MomentReport) -> str:
    rows = [
        (r.n, r.p, r.y_sup_moment, r.y_sup_moment_se, r.z_int_moment, r.z_int_moment_se,
         r.combined, report.ratios[r.p], report.uniform[r.p], report.seed)
        for r in report.rows
    ]
    return _table(MOMENT_HEADER, rows)


def _clean(obj):
    # JSON has no inf/nan; encode them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def to_json(report, meta: dict) -> str:
    return json.dumps(_clean({"meta": meta, "report": report.to_dict()}), sort_keys=True, indent=2) + "\n"


def convergence_svg(report: ConvergenceReport, delta_slack: float, width: int = 800, height: int = 600) -> str:
    """Self-contained SVG of log2(composite error) against n.

    A dashed line of slope ``-(1/2 - delta_slack)`` through the first point
    marks the reference rate.
    """
    ns = [lv.n for lv in report.levels]
    vals = [lv.composite for lv in report.levels]
    pts = [(n, math.log2(v)) for n, v in zip(ns, vals) if v > 0]
    ref_slope = -(0.5 - delta_slack)
    left, right, top, bottom = 80, 40, 50, 70
    pw, ph = width - left - right, height - top - bottom
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:g}" y="28" text-anchor="middle" font-family="sans-serif" font-size="16">'
        f"{report.problem}: log2 error vs level n</text>",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    n_lo, n_hi = min(ns), max(ns)
    if n_hi == n_lo:
        n_lo, n_hi = n_lo - 1, n_hi + 1
    if pts:
        ref = [(n, pts[0][1] + ref_slope * (n - pts[0][0])) for n in (n_lo, n_hi)]
        ys = [p[1] for p in pts] + [r[1] for r in ref]
        y_lo, y_hi = math.floor(min(ys)), math.ceil(max(ys))
        if y_hi == y_lo:
            y_hi += 1
    else:
        ref, y_lo, y_hi = [], -1, 0

    def sx(n: float) -> float:
        return left + pw * (n - n_lo) / (n_hi - n_lo)

    def sy(v: float) -> float:
        return top + ph * (y_hi - v) / (y_hi - y_lo)

    for n in ns:
        out.append(f'<line x1="{sx(n):.2f}" y1="{top + ph}" x2="{sx(n):.2f}" y2="{top + ph + 6}" stroke="black"/>')
        out.append(
            f'<text x="{sx(n):.2f}" y="{top + ph + 22}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{n}</text>'
        )
    step = max(1, math.ceil((y_hi - y_lo) / 10))
    for v in range(y_lo, y_hi + 1, step):
        out.append(f'<line x1="{left - 6}" y1="{sy(v):.2f}" x2="{left}" y2="{sy(v):.2f}" stroke="black"/>')
        out.append(
            f'<text x="{left - 10}" y="{sy(v) + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{v}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:g}" y="{height - 20}" text-anchor="middle" '
        'font-family="sans-serif" font-size="14">level n</text>'
    )
    out.append(
        f'<text x="20" y="{top + ph / 2:g}" text-anchor="middle" font-family="sans-serif" font-size="14" '
        f'transform="rotate(-90 20 {top + ph / 2:g})">log2 composite error</text>'
    )
    if ref:
        (a, fa), (b, fb) = ref
        out.append(
            f'<line x1="{sx(a):.2f}" y1="{sy(fa):.2f}" x2="{sx(b):.2f}" y2="{sy(fb):.2f}" '
            f'stroke="gray" stroke-dasharray="6,4"/>'
        )
        path = " ".join(f"{sx(n):.2f},{sy(v):.2f}" for n, v in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="steelblue" stroke-width="2"/>')
        for n, v in pts:
            out.append(f'<circle cx="{sx(n):.2f}" cy="{sy(v):.2f}" r="4" fill="steelblue"/>')
    else:
        out.append(
            f'<text x="{left + pw / 2:g}" y="{top + ph / 2:g}" text-anchor="middle" '
            'font-family="sans-serif" font-size="14">all error estimates are zero</text>'
        )
    slope: Optional[float] = report.slope
    label = "fitted slope: undefined" if slope is None else f"fitted slope: {slope:.4f}"
    out.append(
        f'<text x="{left + 10}" y="{top + 20}" font-family="sans-serif" font-size="12">{label}; '
        f"reference slope {ref_slope:g} (dashed)</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
