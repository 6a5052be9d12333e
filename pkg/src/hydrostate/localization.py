"""Leak-candidate ranking from paired leak-free and leak state estimates.

A leak shows up as a pressure drop, so the time-averaged difference between
estimated leak-free and leak heads is a per-node leak-likelihood metric;
nodes with positive values are candidates, ranked by magnitude.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import Network


@dataclass(frozen=True)
class LeakScore:
    metric: np.ndarray  # per-node mean head drop, m
    candidates: tuple[int, ...]  # positive-metric nodes, descending, ties to lower index


def lcsm_score(h_nom_estimates, h_leak_estimates) -> LeakScore:
    """Time-averaged nodal head drop between paired estimate sequences.

    Both sequences hold one estimated head vector per time instant, paired
    elementwise (matching boundary conditions).
    """
    nom = np.atleast_2d(np.asarray(h_nom_estimates, dtype=float))
    leak = np.atleast_2d(np.asarray(h_leak_estimates, dtype=float))
    if nom.shape != leak.shape:
        raise ValueError(f"estimate sequences differ in shape: {nom.shape} vs {leak.shape}")
    if nom.shape[0] < 1:
        raise ValueError("at least one paired instant is required")
    metric = np.mean(nom - leak, axis=0)
    order = sorted(np.flatnonzero(metric > 0), key=lambda v: (-metric[v], v))
    return LeakScore(metric=metric, candidates=tuple(int(v) for v in order))


def over_ranked_count(score: LeakScore, leak_node: int, adjacency: list[list[int]]) -> int:
    """Number of nodes scoring strictly above the best of the leak node and
    its first-degree neighbours."""
    group = [leak_node, *adjacency[leak_node]]
    best = np.max(score.metric[group])
    return int(np.sum(score.metric > best))


def write_ranking_csv(path, net: Network, score: LeakScore) -> None:
    """Candidate ranking as CSV rows (node_id, metric, rank)."""
    lines = ["node_id,metric,rank"]
    for rank, v in enumerate(score.candidates, start=1):
        lines.append(f"{net.nodes[v].id},{score.metric[v]:.17g},{rank}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_colormap_json(path, net: Network, score: LeakScore) -> None:
    """Node colouring for external plotting: metric rescaled to [0, 1]."""
    lo = float(np.min(score.metric))
    hi = float(np.max(score.metric))
    span = hi - lo
    scaled = (score.metric - lo) / span if span > 0 else np.zeros_like(score.metric)
    doc = {net.nodes[v].id: float(scaled[v]) for v in range(net.n_nodes)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
