"""Metric x method x structure tables with columns Nipple, Pectoral, Fib. Tissue, Fat. Tissue, Mean."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

from .core_types import FOREGROUND, STRUCTURE_NAMES
from .io import fmt, read_summary_csv
from .metrics import DISPLAY, METRICS, Summary

__all__ = ["ReportRow", "rows_from_summaries", "rows_from_summary_csv", "render_text", "render_csv"]

COLUMNS = [STRUCTURE_NAMES[c] for c in FOREGROUND] + ["Mean"]


@dataclass
class ReportRow:
    metric: str
    method: str
    values: tuple[float, float, float, float]
    excluded: tuple[int, int, int, int] = (0, 0, 0, 0)

    @property
    def mean(self) -> float:
        defined = [v for v in self.values if not math.isnan(v)]
        return math.fsum(defined) / len(defined) if defined else math.nan


def rows_from_summaries(summaries: Sequence[Summary]) -> list[ReportRow]:
    rows = []
    for m in METRICS:
        for s in summaries:
            if m not in s.table:
                continue
            rows.append(ReportRow(
                DISPLAY[m], s.method,
                tuple(s.table[m][c] for c in FOREGROUND),
                tuple(s.excluded[m][c] for c in FOREGROUND),
            ))
    return rows


def rows_from_summary_csv(path) -> list[ReportRow]:
    rows = []
    for rec in read_summary_csv(path):
        vals = tuple(math.nan if rec[n] == "" else float(rec[n]) for n in COLUMNS[:4])
        excl = tuple(int(rec.get(k) or 0) for k in
                     ("excluded_nipple", "excluded_pectoral", "excluded_fibroglandular", "excluded_fatty"))
        rows.append(ReportRow(rec["Metric"], rec["Method"], vals, excl))
    return rows


def _cell(v: float, excluded: int) -> str:
    if math.isnan(v):
        return f"— ({excluded} excl.)" if excluded else "—"
    return f"{v:.4f}"


def render_text(rows: Sequence[ReportRow]) -> str:
    """Plain-text table; the Mean column is recomputed from the structure columns."""
    header = ["Metric", "Method"] + COLUMNS
    body = []
    for r in rows:
        body.append([r.metric, r.method] + [_cell(v, e) for v, e in zip(r.values, r.excluded)]
                    + [_cell(r.mean, 0)])
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    prev = None
    for r, b in zip(rows, body):
        if prev is not None and r.metric != prev:
            lines.append("")
        prev = r.metric
        lines.append("  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Metric", "Method"] + COLUMNS)
    for r in rows:
        w.writerow([r.metric, r.method] + [fmt(v) for v in r.values] + [fmt(r.mean)])
    return buf.getvalue()
