"""Tabular outputs: per-subject and per-combination CSVs and the summary table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Period
from .evaluation import CohortReport
from .selection import Approach


@dataclass(frozen=True)
class SummaryRow:
    """One approach/period line of the accuracy summary table."""

    period: Period
    approach: str  # "COV" or "KS"
    mean_acc: Optional[float]
    sd_acc: Optional[float]
    mean_fcd: Optional[float]
    sd_fcd: Optional[float]
    best_acc: Optional[float] = None
    best_combo: str = ""
    n: int = 0
    N: int = 0
    W: int = 0
    failure: str = ""


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def summarize(
    period: Period,
    approach: Approach,
    reports: Sequence[CohortReport],
    failures: Optional[dict[str, str]] = None,
) -> SummaryRow:
    """Average combination results; the best combination has the top mean ACC."""
    label = Approach(approach).label
    if not reports:
        reasons = sorted(set((failures or {}).values()))
        return SummaryRow(Period(period), label, None, None, None, None,
                          failure="; ".join(reasons) or "no result")
    mean_acc, sd_acc = _mean_sd([r.mean_acc for r in reports])
    mean_fcd, sd_fcd = _mean_sd([r.fcd for r in reports])
    best = max(reports, key=lambda r: r.mean_acc)  # first wins on ties
    return SummaryRow(
        Period(period), label, mean_acc, sd_acc, mean_fcd, sd_fcd,
        best_acc=best.mean_acc, best_combo=best.combo.code, n=best.n, N=best.N, W=best.W,
    )


TABLE_HEADER = ("l", "Approach", "mean (SD) ACC", "mean (SD) FCD",
                "Best biometric's mean ACC (b,n,N,|W|)")


def _cells(row: SummaryRow, show_period: bool) -> list[str]:
    period = str(int(row.period)) if show_period else ""
    if row.failure:
        return [period, row.approach, "-", "-", f"failed: {row.failure}"]
    return [
        period,
        row.approach,
        f"{row.mean_acc:.2f} ({row.sd_acc:.2f})",
        f"{row.mean_fcd:.2f} ({row.sd_fcd:.2f})",
        f"{row.best_acc:.2f} ({row.best_combo},{row.n},{row.N},{row.W})",
    ]


def render_table(rows: Sequence[SummaryRow]) -> str:
    """Fixed-width text table, one block per period, COV before KS."""
    order = {"COV": 0, "KS": 1}
    rows = sorted(rows, key=lambda r: (int(r.period), order.get(r.approach, 2)))
    body: list[Optional[list[str]]] = []
    last = None
    for r in rows:
        if last is not None and r.period != last:
            body.append(None)
        body.append(_cells(r, r.period != last))
        last = r.period
    widths = [
        max(len(TABLE_HEADER[i]), *(len(c[i]) for c in body if c is not None))
        for i in range(len(TABLE_HEADER))
    ]
    rule = "-+-".join("-" * w for w in widths)

    def line(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(TABLE_HEADER), rule]
    for cells in body:
        out.append(rule if cells is None else line(cells))
    return "\n".join(out) + "\n"


def _write(rows: list[list], header: Sequence[str], comment: str = "") -> bytes:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def subjects_csv(reports: Sequence[CohortReport], comment: str = "") -> bytes:
    rows = []
    for rep in reports:
        for r in rep.rows:
            c, m = r.counts, r.metrics
            rows.append([
                rep.combo.code, r.subject, c.TP, c.TN, c.FP, c.FN,
                f"{m.acc:.4f}", f"{m.gar:.4f}", f"{m.far:.4f}", m.n, f"{m.fcd:.2f}", m.W, "",
            ])
        for subject, reason in sorted(rep.skipped.items()):
            rows.append([rep.combo.code, subject] + [""] * 10 + [f"skipped: {reason}"])
    header = ["combo", "subject", "TP", "TN", "FP", "FN", "acc", "gar", "far", "n", "fcd", "W", "note"]
    return _write(rows, header, comment)


def combos_csv(
    reports: Sequence[CohortReport], failures: dict[str, str], comment: str = ""
) -> bytes:
    header = ["combo", "status", "n", "N", "W", "mean_acc", "sd_acc", "fcd", "mean_gar", "mean_far", "reason"]
    rows = [
        [r.combo.code, "ok", r.n, r.N, r.W, f"{r.mean_acc:.4f}", f"{r.sd_acc:.4f}",
         f"{r.fcd:.2f}", f"{r.mean_gar:.4f}", f"{r.mean_far:.4f}", ""]
        for r in reports
    ]
    rows += [[combo, "failed", "", "", "", "", "", "", "", "", reason]
             for combo, reason in failures.items()]
    return _write(rows, header, comment)
