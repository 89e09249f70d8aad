"""Figures for ablation runs, written next to the tabular outputs.

Uses the object-oriented Figure API so nothing touches pyplot's global
state; safe to call from worker threads and headless machines.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

NUMERIC_AXES = ("delta1", "delta4", "max_iterations", "top_k")

STYLE = {
    "accuracy": dict(color="#1f77b4", marker="o", label="Acc"),
    "ra_rate": dict(color="#ff7f0e", marker="s", label="RA Rate"),
    "direct_answer_rate": dict(color="#2ca02c", marker="^", label="Direct Answer Rate"),
    "avg_iters_given_retrieval": dict(color="#d62728", marker="D", label="Iters"),
}


def _save(fig: Figure, path: Path) -> Path:
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    return path


def _mean(row, name):
    v = row.result.mean[name]
    return float("nan") if v is None else v


def plot_sweep(rows: Sequence, axis: str, path: Path) -> Path:
    """Rates on the left axis, Iters on the right, against one swept value."""
    pts = sorted(((float(r.cell[axis]), r) for r in rows), key=lambda p: p[0])
    xs = [x for x, _ in pts]
    fig = Figure(figsize=(5.0, 3.4))
    ax = fig.add_subplot(111)
    for name in ("accuracy", "ra_rate", "direct_answer_rate"):
        ax.plot(xs, [100 * _mean(r, name) for _, r in pts], **STYLE[name])
    ax.set_xlabel(axis)
    ax.set_ylabel("%")
    ax.set_ylim(-2, 102)
    ax.grid(alpha=0.3)
    twin = ax.twinx()
    twin.plot(xs, [_mean(r, "avg_iters_given_retrieval") for _, r in pts],
              linestyle="--", **STYLE["avg_iters_given_retrieval"])
    twin.set_ylabel("Iters")
    handles = ax.get_legend_handles_labels()
    more = twin.get_legend_handles_labels()
    ax.legend(handles[0] + more[0], handles[1] + more[1], fontsize=7, loc="best")
    return _save(fig, path)


def plot_cells(rows: Sequence, path: Path) -> Path:
    """Grouped bars per cell, e.g. the four detector/resolver pairings."""
    from .evaluation import cell_label

    labels = [cell_label(r.cell) for r in rows]
    names = ("accuracy", "ra_rate")
    width = 0.38
    fig = Figure(figsize=(max(4.0, 1.3 * len(rows)), 3.4))
    ax = fig.add_subplot(111)
    for i, name in enumerate(names):
        xs = [j + (i - 0.5) * width for j in range(len(rows))]
        ax.bar(xs, [100 * _mean(r, name) for r in rows], width,
               color=STYLE[name]["color"], label=STYLE[name]["label"])
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=7)
    ax.set_ylabel("%")
    ax.set_ylim(0, 115)
    twin = ax.twinx()
    iters = [_mean(r, "avg_iters_given_retrieval") for r in rows]
    twin.plot(range(len(rows)), iters, linestyle="none", **STYLE["avg_iters_given_retrieval"])
    twin.set_ylabel("Iters")
    finite = [v for v in iters if v == v]
    if finite:
        twin.set_ylim(0, max(finite) * 1.15)
    handles = ax.get_legend_handles_labels()
    more = twin.get_legend_handles_labels()
    ax.legend(handles[0] + more[0], handles[1] + more[1], fontsize=7, loc="upper left", ncol=3)
    return _save(fig, path)


def render_ablation_figures(rows: Sequence, out_dir: str | Path) -> list[Path]:
    """One line plot per swept numeric axis, plus a bar chart of all cells."""
    out = Path(out_dir)
    written = []
    if not rows:
        return written
    for axis in NUMERIC_AXES:
        carrying = [r for r in rows if axis in r.cell]
        if len({float(r.cell[axis]) for r in carrying}) > 1:
            written.append(plot_sweep(carrying, axis, out / f"sweep_{axis}.png"))
    written.append(plot_cells(rows, out / "cells.png"))
    return written
