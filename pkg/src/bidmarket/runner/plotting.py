"""Plot data export. The CSV is the contract; the PNG is a convenience rendering."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..dynamics import MarketTrace
from .traces import _fmt

KINDS = ("bids_vs_k", "dist_vs_k", "payoff_gap_vs_k")


def plot_series(trace: MarketTrace, kind: str) -> tuple[list[str], np.ndarray]:
    """Header and column block for one figure kind (first column is k)."""
    if len(trace) == 0:
        raise ValueError("cannot plot an empty trace")
    n = trace.b.shape[1]
    if kind == "bids_vs_k":
        return ["k"] + [f"b_{i}" for i in range(1, n + 1)], np.column_stack([trace.k, trace.b])
    if kind == "dist_vs_k":
        return ["k", "dist_to_bstar"], np.column_stack([trace.k, trace.dist])
    if kind == "payoff_gap_vs_k":
        return ["k"] + [f"gap_{i}" for i in range(1, n + 1)], np.column_stack([trace.k, trace.payoff_gap()])
    raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")


def emit_plot_data(trace: MarketTrace, kind: str, path, render: bool = True,
                   highlight: tuple[int, ...] = ()) -> list[Path]:
    """Write ``path`` as CSV and, if ``render``, a PNG next to it. Returns files written."""
    head, data = plot_series(trace, kind)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for row in data:
            w.writerow([str(int(row[0]))] + [_fmt(v) for v in row[1:]])
    out = [path]
    if render:
        out.append(_render(head, data, kind, path.with_suffix(".png"), highlight))
    return out


_YLABEL = {"bids_vs_k": "bid", "dist_vs_k": r"$\|b(k)-b^*\|$", "payoff_gap_vs_k": r"$u_n - u_n^*$"}


def _render(head, data, kind, png: Path, highlight) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    k = data[:, 0]
    cols = range(1, data.shape[1])
    if kind == "payoff_gap_vs_k" and highlight:
        cols = [j for j in cols if j in highlight]
    for j in cols:
        ax.plot(k, data[:, j], lw=1.0, label=head[j])
    if kind == "dist_vs_k":
        ax.set_yscale("log")
    if kind == "payoff_gap_vs_k":
        ax.axhline(0.0, color="k", lw=0.6, ls="--")
    ax.set_xlabel("iteration k")
    ax.set_ylabel(_YLABEL[kind])
    if data.shape[1] > 2:
        ax.legend(fontsize=7, ncol=3, frameon=False)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return png
