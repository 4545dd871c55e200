"""Figure rendering for benchmark tables and diagnostic reports.

Every function writes a PNG next to the delimited output and returns the
path.  The Agg backend is forced so rendering works headless."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .diagnostics import OpnormReport
from .optimizer import FitResult
from .simulation import ErrorTable

_META = {"Software": "hubertucker"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    return path


def plot_benchmark_errors(table: ErrorTable, path) -> Path:
    """Log-log median estimation error against n, with the fitted slope."""
    pts = table.median_errors_by_n()
    ns = np.array([p[0] for p in pts], dtype=float)
    med = np.array([p[1] for p in pts], dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for row in table.rows:
        ax.plot(row["n"], row["error_frobenius"], ".", color="0.75", ms=4,
                zorder=1)
    ax.plot(ns, med, "o-", color="C0", label="median", zorder=2)
    if len(ns) >= 2 and np.all(med > 0):
        slope = table.loglog_slope()
        ref = med[0] * (ns / ns[0]) ** slope
        ax.plot(ns, ref, "--", color="C3", lw=1,
                label=f"fit slope {slope:.2f}")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sample size n")
    ax.set_ylabel(r"$\|\hat A - A^*\|_F$")
    return _save(fig, path)


def plot_fit_traces(result: FitResult, path) -> Path:
    """Objective (and estimation error, when known) per iteration."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.semilogy(result.objective_trace, color="C0", label="objective")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    if result.error_trace is not None and len(result.error_trace):
        ax2 = ax.twinx()
        ax2.semilogy(result.error_trace, color="C3", label="error")
        ax2.set_ylabel(r"$\|A^{(T)} - A^*\|_F$", color="C3")
        ax2.tick_params(axis="y", colors="C3")
    return _save(fig, path)


def plot_opnorm_deviation(report: OpnormReport, path) -> Path:
    """Median operator-norm deviation against n, log-log, with slope."""
    ns = np.array(report.n_grid, dtype=float)
    med = np.array(report.median_deviation, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for ni, devs in enumerate(report.deviations):
        ax.plot([ns[ni]] * len(devs), devs, ".", color="0.75", ms=4, zorder=1)
    ax.plot(ns, med, "o-", color="C0", label="median", zorder=2)
    if np.isfinite(report.slope) and np.all(med > 0):
        ref = med[0] * (ns / ns[0]) ** report.slope
        ax.plot(ns, ref, "--", color="C3", lw=1,
                label=f"fit slope {report.slope:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sample size n")
    ax.set_ylabel("operator-norm deviation")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_rank_history(history, dims, path) -> Path:
    """Rank-guess triples across the selection iterations."""
    hist = np.array(history)
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for k in range(3):
        ax.step(range(len(hist)), hist[:, k], where="mid", label=f"mode {k + 1}")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("rank guess")
    ax.set_ylim(0, max(dims) + 1)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
