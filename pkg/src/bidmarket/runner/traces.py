"""Delimited trace output. Every float is written with ``%.10g`` so runs are byte-stable."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..dynamics import MarketTrace

FMT = "%.10g"


def _fmt(v) -> str:
    return FMT % v


def trace_header(n: int, extended: bool) -> list[str]:
    cols = ["k"]
    for prefix in ("b", "xopt", "q"):
        cols += [f"{prefix}_{i}" for i in range(1, n + 1)]
    cols += ["beta", "dist_to_bstar"]
    if extended:
        cols += [f"d_{i}" for i in range(1, n + 1)] + [f"payoff_{i}" for i in range(1, n + 1)]
    return cols


def trace_rows(trace: MarketTrace, extended: bool):
    dist = trace.dist
    for i in range(len(trace)):
        row = [str(i + 1)]
        row += [_fmt(v) for v in trace.b[i]]
        row += [_fmt(v) for v in trace.x_opt[i]]
        row += [_fmt(v) for v in trace.q[i]]
        row += [_fmt(trace.beta[i]), _fmt(dist[i])]
        if extended:
            row += [_fmt(v) for v in trace.d[i]] + [_fmt(v) for v in trace.payoff[i]]
        yield row


def trace_to_csv(trace: MarketTrace, extended: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(trace.b.shape[1], extended))
    w.writerows(trace_rows(trace, extended))
    return buf.getvalue()


def write_trace(trace: MarketTrace, path, extended: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(trace_to_csv(trace, extended))
    return path


def read_trace(path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as float arrays, keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, j] for j, name in enumerate(head)}
