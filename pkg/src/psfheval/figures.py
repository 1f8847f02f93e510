"""Matplotlib figure rendering, SVG only.

Output is byte-stable for identical inputs: a fixed svg.hashsalt, no Date
metadata, and no timestamps anywhere. Every plotted number is sourced from the
same statistics the JSON tables carry.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("svg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STRUCTURE_ORDER = ("PSFH", "FH", "PS")


def _apply_style() -> None:
    plt.rcParams.update(
        {
            "svg.hashsalt": "psfheval",
            "font.family": "DejaVu Sans",
            "font.size": 9,
            "axes.titlesize": 10,
            "axes.labelsize": 9,
            "figure.dpi": 100,
        }
    )


def _save(fig, path) -> None:
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)


def _bxp_stats(label: str, box) -> dict:
    return {
        "label": label,
        "med": box.median,
        "q1": box.q1,
        "q3": box.q3,
        "whislo": box.min,
        "whishi": box.max,
        "fliers": list(box.outliers),
    }


def metric_box_figure(metric: str, boxes: dict, path) -> None:
    """One panel per structure, one box per team, for a single metric."""
    _apply_style()
    panels = [s for s in _STRUCTURE_ORDER if f"{metric}_{s}" in boxes]
    fig, axes = plt.subplots(len(panels), 1, figsize=(7, 2.4 * len(panels)), squeeze=False)
    for ax, structure in zip(axes[:, 0], panels):
        by_team = boxes[f"{metric}_{structure}"]
        teams = sorted(by_team)
        stats = [_bxp_stats(t, by_team[t]) for t in teams]
        ax.bxp(stats, showfliers=True)
        ax.set_title(f"{metric} {structure}")
        ax.set_ylabel(metric)
        ax.tick_params(axis="x", rotation=30)
        unbounded = [by_team[t].n_unbounded for t in teams]
        if any(unbounded):
            for i, n in enumerate(unbounded, start=1):
                if n:
                    ax.annotate(f"+{n} inf", (i, 1.0), xycoords=("data", "axes fraction"),
                                ha="center", va="bottom", fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def blob_figure(stability, task_index: int, path) -> None:
    """Rank-frequency blobs per team: area proportional to bootstrap frequency.

    Median ranks are marked with a black cross; black lines span the 2.5th to
    97.5th percentile of achieved ranks.
    """
    _apply_style()
    teams = stability.teams
    task_id = stability.task_ids[task_index]
    b = stability.n_replicates
    fig, ax = plt.subplots(figsize=(1.2 + 0.65 * len(teams), 4.2))
    for ki, team in enumerate(teams):
        x = ki + 1
        for rank, count in stability.frequencies[task_index][ki]:
            ax.scatter([x], [rank], s=700.0 * count / b, facecolors="none",
                       edgecolors="tab:blue", linewidths=1.0)
        ax.plot(
            [x, x],
            [stability.interval_low[ki, task_index], stability.interval_high[ki, task_index]],
            color="black", linewidth=0.8, zorder=1,
        )
        ax.scatter([x], [stability.median_rank[ki, task_index]], marker="x", color="black", s=40)
    ax.set_xticks(range(1, len(teams) + 1))
    ax.set_xticklabels(teams, rotation=30, ha="right")
    ax.set_ylabel("rank")
    ax.set_ylim(len(teams) + 0.5, 0.5)
    ax.set_title(f"bootstrap ranks: {task_id} ({stability.scheme}, B={b})")
    fig.tight_layout()
    _save(fig, path)


def significance_figure(task_id: str, teams: list, matrix: np.ndarray, path) -> None:
    """Incidence heatmap: yellow where the x-axis team significantly beats the y-axis team."""
    _apply_style()
    k = len(teams)
    fig, ax = plt.subplots(figsize=(1.6 + 0.5 * k, 1.2 + 0.5 * k))
    # transpose so column = winning team on the x axis
    ax.imshow(matrix.T.astype(float), cmap="cividis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(k))
    ax.set_xticklabels(teams, rotation=90)
    ax.set_yticks(range(k))
    ax.set_yticklabels(teams)
    ax.set_title(f"significant superiority: {task_id}")
    fig.tight_layout()
    _save(fig, path)


def tau_figure(stability, path) -> None:
    """Histogram-backed density strips of the bootstrap tau values per task."""
    _apply_style()
    task_ids = stability.task_ids
    fig, ax = plt.subplots(figsize=(1.5 + 0.8 * len(task_ids), 4.0))
    edges = np.linspace(-1.0, 1.0, 41)
    centers = 0.5 * (edges[:-1] + edges[1:])
    for ti, task_id in enumerate(task_ids):
        hist, _ = np.histogram(stability.tau[ti], bins=edges)
        if hist.max() > 0:
            widths = 0.4 * hist / hist.max()
            ax.barh(centers, widths, left=ti + 1 - widths / 2.0, height=0.05,
                    color="tab:purple", edgecolor="none")
        ax.scatter([ti + 1], [stability.tau_median[ti]], marker="x", color="black", s=30)
    ax.set_xticks(range(1, len(task_ids) + 1))
    ax.set_xticklabels(task_ids, rotation=45, ha="right")
    ax.set_ylabel("Kendall tau vs full-data ranking")
    ax.set_ylim(-1.05, 1.05)
    ax.set_title(f"ranking stability ({stability.scheme}, B={stability.n_replicates})")
    fig.tight_layout()
    _save(fig, path)


def delta_box_figure(delta_boxes: dict, path) -> None:
    """Box panel of per-team absolute AoP differences in degrees."""
    _apply_style()
    teams = sorted(delta_boxes)
    fig, ax = plt.subplots(figsize=(1.5 + 0.65 * len(teams), 3.6))
    ax.bxp([_bxp_stats(t, delta_boxes[t]) for t in teams], showfliers=True)
    ax.set_ylabel("|AoP difference| (deg)")
    ax.tick_params(axis="x", rotation=30)
    ax.set_title("AoP agreement by team")
    fig.tight_layout()
    _save(fig, path)
