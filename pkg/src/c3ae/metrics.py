"""Summary statistics over angular errors and the results-table emitter."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

COLUMNS = ("Best25", "Mean", "Med.", "Tri.", "Worst25")


@dataclass(frozen=True)
class ErrorStats:
    best25_mean: float
    mean: float
    median: float
    trimean: float
    worst25_mean: float

    def as_row(self) -> tuple[float, ...]:
        return astuple(self)


def quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile of an already sorted sequence.

    The quantile sits at rank position ``(n - 1) * q``.
    """
    n = len(values)
    if n == 0:
        raise ValueError("quantile of an empty sequence")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    pos = (n - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(values[lo]) + (float(values[hi]) - float(values[lo])) * frac


def summarize(errors: Iterable[float]) -> ErrorStats:
    """Reduce a list of angular errors to the five-statistic summary.

    Tails hold ``ceil(n / 4)`` values each.
    """
    values = np.sort(np.asarray(list(errors), dtype=np.float64))
    n = values.size
    if n == 0:
        raise ValueError("cannot summarize an empty error list")
    tail = math.ceil(n / 4)
    q1 = quantile(values, 0.25)
    q2 = quantile(values, 0.5)
    q3 = quantile(values, 0.75)
    return ErrorStats(
        best25_mean=float(values[:tail].mean()),
        mean=float(values.mean()),
        median=q2,
        trimean=(q1 + 2.0 * q2 + q3) / 4.0,
        worst25_mean=float(values[n - tail:].mean()),
    )


def format_table(rows: Mapping[str, ErrorStats], precision: int = 2) -> str:
    """Aligned plain-text table, one row per method."""
    header = ("Method",) + COLUMNS
    body = [(name,) + tuple(f"{v:.{precision}f}" for v in stats.as_row()) for name, stats in rows.items()]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = []
    for r in [header, *body]:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines)


def format_csv(rows: Mapping[str, ErrorStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method",) + tuple(f.name for f in fields(ErrorStats)))
    for name, stats in rows.items():
        writer.writerow((name,) + tuple(repr(v) for v in stats.as_row()))
    return buf.getvalue()
