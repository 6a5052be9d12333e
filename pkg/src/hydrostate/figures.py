"""Figure rendering for the report path.

Pure file output: every function takes computed results and writes a PNG
next to the delimited artifacts.  Uses the Agg backend so reports render in
headless runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import BASELINE, METHODS, UKF_DYNAMIC, Comparison
from .localization import LeakScore
from .network import Network

_COLORS = {BASELINE: "tab:gray", "ukf-gsi": "tab:blue", UKF_DYNAMIC: "tab:red"}


def save_rmse_traces(path, comparison: Comparison, instant: int | None = None,
                     update_interval: int | None = None) -> None:
    """Per-iteration RMSE of each method on one instant (default: the
    worst-baseline one); the non-iterating baseline renders as a flat line."""
    t = comparison.worst_instant if instant is None else instant
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in METHODS:
        trace = comparison.methods[name].traces[t]
        style = dict(color=_COLORS.get(name), lw=1.6)
        if name == BASELINE:
            style["ls"] = "--"
        ax.plot(np.arange(len(trace)), trace, label=name, **style)
    if update_interval:
        for k in range(update_interval, len(comparison.methods[UKF_DYNAMIC].traces[t]) - 1,
                       update_interval):
            ax.axvline(k, color="k", alpha=0.12, lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("head RMSE (m)")
    ax.set_title(f"estimation error by iteration (hour {comparison.hours[t]})")
    ax.legend()
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_summary_bars(path, comparison: Comparison) -> None:
    """Mean +/- std RMSE per method."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(METHODS)
    means = [comparison.summary[n]["mean"] for n in names]
    stds = [comparison.summary[n]["std"] for n in names]
    ax.bar(names, means, yerr=stds, capsize=4,
           color=[_COLORS.get(n) for n in names], alpha=0.85)
    ax.set_ylabel("mean head RMSE (m)")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_localization_bars(path, net: Network, scores: dict[str, LeakScore],
                           leak_node: int | None = None) -> None:
    """Candidate bar charts per method; the leak node is highlighted and its
    neighbourhood's best metric drawn as a reference line."""
    neighbours = set(net.adjacency_lists()[leak_node]) if leak_node is not None else set()
    fig, axes = plt.subplots(len(scores), 1, figsize=(8, 2.8 * len(scores)), squeeze=False)
    for ax, (name, score) in zip(axes.ravel(), scores.items()):
        cand = list(score.candidates)
        vals = [score.metric[v] for v in cand]
        colors = []
        for v in cand:
            if v == leak_node:
                colors.append("gold")
            elif v in neighbours:
                colors.append("tab:red")
            else:
                colors.append("tab:blue")
        ax.bar(range(len(cand)), vals, color=colors)
        ax.set_xticks(range(len(cand)))
        ax.set_xticklabels([net.nodes[v].id for v in cand], rotation=90, fontsize=6)
        if leak_node is not None:
            group = [leak_node, *neighbours]
            ax.axhline(float(np.max(score.metric[group])), color="red", ls="--", lw=1.0,
                       alpha=0.7)
        ax.set_ylabel("mean head drop (m)")
        ax.set_title(name, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
