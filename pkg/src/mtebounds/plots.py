"""Figure rendering for the report paths: interval charts for bound grids and
table diffs, coverage/width curves for the Monte Carlo harness. Figures are
written to files next to the delimited output; the CSV/JSON stays the
machine-readable contract."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_bounds_records", "plot_table_rows", "plot_coverage_reports"]


def _interval_axis(ax, labels, lowers, uppers, color, label):
    y = np.arange(len(labels))
    lowers = np.asarray(lowers, dtype=float)
    uppers = np.asarray(uppers, dtype=float)
    mid = (lowers + uppers) / 2.0
    err = (uppers - lowers) / 2.0
    ax.errorbar(mid, y, xerr=err, fmt="o", capsize=3, color=color, label=label, lw=1.5)
    ax.set_yticks(y)
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.grid(True, axis="x", alpha=0.3)


def plot_bounds_records(records: list[dict], path: str) -> None:
    """One horizontal interval per bound record; empty results marked."""
    bounded = [r for r in records if r["status"] == "bounded"]
    empty = [r for r in records if r["status"] != "bounded"]
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.35 * len(records) + 1)))
    if bounded:
        labels = [
            f"{r['dgp']} v{r['v_dim']} s={r['sigma']:g} {r['method']} {r['restrictions']} {r['target']}"
            for r in bounded
        ]
        _interval_axis(ax, labels, [r["lower"] for r in bounded], [r["upper"] for r in bounded], "C0", "interval")
    if empty:
        msg = ", ".join(f"{r['dgp']} v{r['v_dim']} s={r['sigma']:g} {r['method']}" for r in empty)
        ax.set_title(f"empty: {msg}", fontsize=8)
    ax.axvline(0.0, color="k", lw=0.5)
    ax.set_xlabel("target bounds")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_table_rows(rows: list[dict], path: str) -> None:
    """Computed vs reference intervals for one golden table."""
    fig, ax = plt.subplots(figsize=(7.5, max(3.0, 0.3 * len(rows) + 1)))
    labels, y = [], 0
    for r in rows:
        tag = f"v{r['v_dim']} s={r['sigma']:g} {r['method']} {r['restrictions']}"
        labels.append(tag + ("" if r["ok"] else "  *FAIL*"))
        if r["expected"] != "empty":
            lo, hi = r["expected"]
            ax.plot([lo, hi], [y + 0.15, y + 0.15], color="C1", lw=3, alpha=0.6)
        if r["status"] == "bounded":
            ax.plot([r["lower"], r["upper"]], [y - 0.15, y - 0.15], color="C0", lw=3)
        y += 1
    ax.set_yticks(np.arange(len(rows)))
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.axvline(0.0, color="k", lw=0.5)
    ax.grid(True, axis="x", alpha=0.3)
    ax.set_title(f"table {rows[0]['table']}: computed (blue) vs reference (orange)", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_coverage_reports(reports, path: str) -> None:
    """Coverage and mean width against the sample size, one curve per target."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    by_target: dict[str, list] = {}
    for rep in reports:
        by_target.setdefault(rep.target, []).append(rep)
    for i, (target, reps) in enumerate(sorted(by_target.items())):
        reps = sorted(reps, key=lambda r: r.n)
        ns = [r.n for r in reps]
        ax1.plot(ns, [r.coverage for r in reps], marker="o", color=f"C{i}", label=target)
        ax2.plot(ns, [r.mean_width for r in reps], marker="o", color=f"C{i}", label=target)
    ax1.axhline(0.95, color="k", ls="--", lw=0.8)
    ax1.set_xlabel("n")
    ax1.set_ylabel("coverage of the population interval")
    ax1.set_ylim(0.0, 1.05)
    ax1.legend(fontsize=8)
    ax2.set_xlabel("n")
    ax2.set_ylabel("mean CI width")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
