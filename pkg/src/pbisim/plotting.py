"""Figures for benchmark reports, rendered off-screen to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import ExperimentReport, PipelineTiming  # noqa: E402


def plot_spl_avg(report: ExperimentReport, path: str) -> str:
    """Box plot of SplAvg per strategy, one box per strategy."""
    data = report.by_strategy("spl_avg")
    names = sorted(data)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.boxplot([data[k] for k in names], tick_labels=names, showmeans=True)
    ax.axhline(1.0, color="0.6", lw=0.8, ls="--")
    ax.tick_params(axis="x", labelsize=8, labelrotation=15)
    ax.set_ylabel("SplAvg")
    ax.set_title("splitter mass per state")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_wall_time(report: ExperimentReport, path: str) -> str:
    """Mean refinement wall time (ms) per strategy and backend."""
    acc: dict[tuple[str, str], list[float]] = {}
    for r in report.rows:
        acc.setdefault((r["strategy"], r["backend"]), []).append(r["wall_time"])
    keys = sorted(acc)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(keys)), [sum(v) / len(v) for v in (acc[k] for k in keys)], color="C0")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels([f"{s}\n{b}" for s, b in keys], fontsize=7)
    ax.set_ylabel("wall time [ms]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_pipeline(timings: dict[str, PipelineTiming], path: str) -> str:
    """Stacked bars: direct value iteration against minimise + quotient iteration."""
    names = list(timings)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = range(len(names))
    direct = [timings[n].t_direct for n in names]
    bisim = [timings[n].t_bisim for n in names]
    vi_q = [timings[n].t_vi_quotient for n in names]
    w = 0.38
    ax.bar([i - w / 2 for i in x], direct, w, label="direct VI")
    ax.bar([i + w / 2 for i in x], bisim, w, label="minimise")
    ax.bar([i + w / 2 for i in x], vi_q, w, bottom=bisim, label="VI on quotient")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, fontsize=7)
    ax.set_ylabel("time [ms]")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
