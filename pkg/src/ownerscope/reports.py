"""JSON and plain-text rendering of analysis results."""

from __future__ import annotations

import json
import math
from typing import Any, Sequence

from ownerscope.analysis import CorrelationReport, ModelFit, SweepReport


def _clean(obj: Any) -> Any:
    # strict JSON has no NaN/Infinity
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


def dumps(payload: Any) -> str:
    return json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n"


def _num(v: Any, digits: int = 4) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-3):
            return f"{v:.3e}"
        return f"{v:.{digits}f}"
    return str(v)


def table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [[str(h) for h in headers]] + [[_num(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for k, r in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def correlation_text(report: CorrelationReport) -> str:
    masked = set(report.masked)
    headers = ["metric"]
    for t in report.targets:
        headers += [f"{t}:{m}" for m in report.methods]
    rows = []
    for metric in report.metrics:
        row: list[Any] = [metric]
        for t in report.targets:
            for m in report.methods:
                v = report.values[t][metric][m]
                row.append(f"{v:.2f}" + ("*" if (t, metric, m) in masked else ""))
        rows.append(row)
    text = f"{report.analysis} correlation (n={report.n})\n" + table(headers, rows)
    if masked:
        text += "* undefined (constant column), reported as 0\n"
    return text


def regression_text(fits: Sequence[ModelFit]) -> str:
    rows = []
    for f in fits:
        if f.result is None:
            rows.append([f.target, f.model, None, None, None, None, f.error])
        else:
            rows.append([f.target, f.model, f.result.adj_r_squared, f.result.f_statistic, f.focal_coefficient, f.result.n, ""])
    return table(["target", "model", "adj_r2", "F", "coef", "n", "note"], rows)


def sweep_text(report: SweepReport) -> str:
    rows = [
        [f"{p.a} vs {p.b}", p.frobenius, p.minmax, p.expdecay, p.cosine, p.ks_d, p.ks_p, p.mantel_r, p.mantel_p]
        for p in report.pairwise
    ]
    text = f"{report.axis} sweep ({len(report.points)} points, {len(report.pairwise)} pairs)\n"
    text += table(["pair", "frobenius", "minmax", "expdecay", "cosine", "ks_D", "ks_p", "mantel_r", "mantel_p"], rows)
    for key, value in report.summary.items():
        if not isinstance(value, (list, dict)):
            text += f"{key}: {_num(value)}\n"
    return text
