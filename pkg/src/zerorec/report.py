"""Delimited report output and the figures rendered alongside it."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first

from .evaluation import MetricReport

METRICS = ("auc", "recall_at_10", "ndcg_at_10")


def write_report_csv(report: MetricReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", *METRICS, "n_users", "n_tasks"])
        for row in report.per_seed:
            writer.writerow(
                [row["seed"], *(f"{row[m]:.6f}" for m in METRICS), row["n_users"], row["n_tasks"]]
            )
        writer.writerow(
            ["mean", *(f"{getattr(report, m):.6f}" for m in METRICS), report.n_users, report.n_tasks]
        )
    return path


def render_report_figure(report: MetricReport, path: str | Path, title: str = "") -> Path:
    """Bar chart of the three metrics with per-seed scatter overlaid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = range(len(METRICS))
    means = [getattr(report, m) for m in METRICS]
    ax.bar(xs, means, width=0.55, color="#4878d0", zorder=2)
    for i, m in enumerate(METRICS):
        seeds = [row[m] for row in report.per_seed]
        ax.scatter([i] * len(seeds), seeds, marker="o", s=14, color="#222222", zorder=3)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(["AUC", "Recall@10", "NDCG@10"])
    ax.set_ylim(0, 1)
    ax.set_ylabel("metric")
    if title:
        ax.set_title(title)
    ax.grid(axis="y", alpha=0.3, zorder=0)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_sweep_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["axis", "value", "mode", "seed", *METRICS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in cols})
    return path


def render_sweep_figure(rows: list[dict], axis: str, path: str | Path) -> Path:
    """Mean metric vs axis value, one line per (mode, metric)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, len(METRICS), figsize=(11, 3.2), sharex=True)
    modes = sorted({r["mode"] for r in rows})
    for ax, metric in zip(axes, METRICS):
        for mode in modes:
            pts: dict[float, list[float]] = {}
            for r in rows:
                if r["mode"] == mode:
                    pts.setdefault(float(r["value"]), []).append(float(r[metric]))
            xs = sorted(pts)
            ys = [sum(pts[x]) / len(pts[x]) for x in xs]
            ax.plot(xs, ys, marker="o", label=mode)
        ax.set_xlabel(axis)
        ax.set_title(metric)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("metric")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
