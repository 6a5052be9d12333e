"""Built-in synthetic benchmark networks.

``small_network`` (20 junctions, 1 reservoir) keeps unit tests fast;
``desk_network`` (36 junctions, 2 reservoirs) is the shipped evaluation
fixture; ``modena_like`` matches the published medium-scale benchmark's size
(268 junctions, 317 pipes, 4 reservoirs) for performance checks.  All are
deterministic: fixed seeds, fixed construction order.
"""

from __future__ import annotations

import numpy as np

from .network import JUNCTION, RESERVOIR, Network, Node, RawPipe, SensorConfig, make_network

# a plausible diurnal demand cycle, mean ~1.0
DAY_PATTERN = (
    0.55, 0.50, 0.45, 0.45, 0.50, 0.60, 0.80, 1.10, 1.30, 1.35, 1.30, 1.25,
    1.20, 1.15, 1.10, 1.10, 1.15, 1.25, 1.40, 1.45, 1.30, 1.00, 0.80, 0.65,
)


def _hop_distances(n_nodes, edges, sources):
    """Unweighted hop distance from the nearest source, by BFS."""
    adj = [[] for _ in range(n_nodes)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    dist = np.full(n_nodes, -1, dtype=int)
    queue = list(sources)
    for s in sources:
        dist[s] = 0
    while queue:
        v = queue.pop(0)
        for w in adj[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def _grid_network(nx, ny, reservoir_attach, reservoir_heads, seed, demand_lps_range,
                  spacing=(250.0, 200.0), diameter_jitter=0.55, main_diameter=0.7) -> Network:
    """Rectangular junction grid with reservoirs attached at given corners.

    Pipe diameters taper with hop distance from the feed points and carry a
    strong multiplicative jitter (real stock is heterogeneous, and the
    estimation problem is only interesting when the field is rough).
    Lengths, elevations, demands, and roughness get wobble too.
    """
    rng = np.random.default_rng(seed)
    n_j = nx * ny

    def jid(r, c):
        return f"J{r * nx + c + 1:02d}"

    nodes = []
    for r in range(ny):
        for c in range(nx):
            e = 2.0 + 0.6 * r + 0.4 * c + rng.uniform(0.0, 4.0)
            nodes.append(Node(jid(r, c), JUNCTION, e))

    # grid edges, index pairs for the hop-distance pass
    edge_pairs = []
    edge_nodes = []
    for r in range(ny):
        for c in range(nx):
            if c + 1 < nx:
                edge_pairs.append((r * nx + c, r * nx + c + 1))
                edge_nodes.append((jid(r, c), jid(r, c + 1), spacing[0]))
            if r + 1 < ny:
                edge_pairs.append((r * nx + c, (r + 1) * nx + c))
                edge_nodes.append((jid(r, c), jid(r + 1, c), spacing[1]))

    feeds = [r * nx + c for r, c in reservoir_attach]
    hops = _hop_distances(n_j, edge_pairs, feeds)

    pipes = []
    for k, (a, b, base_len) in enumerate(edge_nodes):
        i, j = edge_pairs[k]
        depth = min(hops[i], hops[j])
        diameter = (0.11 + 0.24 * np.exp(-depth / 3.5)) * rng.uniform(1.0 - diameter_jitter,
                                                                      1.0 + diameter_jitter)
        pipes.append(RawPipe(
            f"P{k + 1:03d}", a, b,
            base_len * rng.uniform(0.8, 1.2),
            round(diameter, 4),
            round(95.0 + 45.0 * rng.uniform(), 1),
        ))

    # fat transmission mains: modest head drop at the inlets
    for m, ((r, c), head) in enumerate(zip(reservoir_attach, reservoir_heads), start=1):
        rid = f"R{m}"
        nodes.append(Node(rid, RESERVOIR, head, head))
        pipes.append(RawPipe(f"PR{m}", rid, jid(r, c), 120.0, main_diameter, 130.0))

    # demand draws rounded to 0.1 ml/s so file round trips are exact
    demands = {
        jid(r, c): round(rng.uniform(*demand_lps_range), 4) / 1000.0
        for r in range(ny) for c in range(nx)
    }
    return make_network(nodes, pipes, demands, {"day": DAY_PATTERN}, {})


_SMALL_AMR = ("J02", "J05", "J09", "J11", "J13", "J17", "J19")


def small_network() -> Network:
    """20 junctions on a 5x4 grid fed by one reservoir.

    Demands are light, so the graph-diffusion prior is a good model of this
    network and exact data is recovered almost exactly."""
    return _grid_network(5, 4, [(0, 0)], [55.0], seed=20240,
                         demand_lps_range=(0.5, 1.5), main_diameter=0.6)


def small_sensors(net: Network) -> SensorConfig:
    return SensorConfig.from_ids(net, ["R1", "J07", "J14", "J20"], _SMALL_AMR)


def loaded_small_network() -> Network:
    """The small grid's heavily-loaded sibling: same shape, demand high
    enough that estimation errors are material.  Used by leak-scenario
    comparisons."""
    return _grid_network(5, 4, [(0, 0)], [55.0], seed=20241,
                         demand_lps_range=(3.0, 6.0), diameter_jitter=0.35,
                         main_diameter=0.6)


_DESK_AMR = ("J02", "J04", "J09", "J11", "J12", "J14", "J18", "J20", "J22", "J27", "J30", "J36")


def desk_network() -> Network:
    """36 junctions on a 6x6 grid fed by two reservoirs at opposite corners;
    total demand ~450 l/s."""
    return _grid_network(6, 6, [(0, 0), (5, 5)], [58.0, 56.0], seed=61812,
                         demand_lps_range=(7.0, 15.0), main_diameter=0.7)


def desk_sensors(net: Network) -> SensorConfig:
    """Instrumentation clustered away from the south-west corner, which stays
    at least three hops from every sensor (the challenging leak pocket)."""
    pressure = ["R1", "R2", "J08", "J16", "J23", "J29"]
    return SensorConfig.from_ids(net, pressure, _DESK_AMR)


def min_hops_to_sensors(net: Network, sensors: SensorConfig) -> np.ndarray:
    """Per-node hop distance to the nearest sensor of any kind."""
    edges = [(p.source, p.sink) for p in net.pipes]
    return _hop_distances(net.n_nodes, edges, sorted({*sensors.pressure_nodes, *sensors.amr_nodes}))


def remote_leak_node(net: Network, sensors: SensorConfig) -> int:
    """The junction farthest (in hops) from every sensor; ties to lower index."""
    dist = min_hops_to_sensors(net, sensors)
    jun = net.junction_indices
    return int(jun[np.argmax(dist[jun])])


def modena_like(seed: int = 31702) -> Network:
    """Synthetic network matching the published benchmark's scale:
    268 junctions, 317 pipes, 4 reservoirs, ~400 l/s total demand."""
    rng = np.random.default_rng(seed)
    nx, ny = 17, 16  # 272 slots; the 4 corner slots become reservoirs
    total = nx * ny
    corner_slots = {0, nx - 1, (ny - 1) * nx, total - 1}

    names = []
    nodes = []
    res_heads = iter((62.0, 60.0, 61.0, 59.0))
    for s in range(total):
        if s in corner_slots:
            head = next(res_heads)
            names.append(f"R{len(names) + 1}")
            nodes.append(Node(names[-1], RESERVOIR, head, head))
        else:
            names.append(f"N{s + 1:03d}")
            nodes.append(Node(names[-1], JUNCTION, 5.0 + rng.uniform(0.0, 15.0)))

    # spanning tree by multi-source BFS from the reservoir corners over the
    # full grid, so every junction drains toward its nearest inlet
    grid_edges = []
    for r in range(ny):
        for c in range(nx):
            if c + 1 < nx:
                grid_edges.append((r * nx + c, r * nx + c + 1))
            if r + 1 < ny:
                grid_edges.append((r * nx + c, (r + 1) * nx + c))
    adj = [[] for _ in range(total)]
    for a, b in grid_edges:
        adj[a].append(b)
        adj[b].append(a)
    tree = []
    visited = set(corner_slots)
    frontier = sorted(corner_slots)
    while frontier:
        nxt = []
        for v in frontier:
            for w in adj[v]:
                if w not in visited:
                    visited.add(w)
                    tree.append((v, w))
                    nxt.append(w)
        frontier = nxt
    # close loops with chords drawn from the unused grid edges
    tree_set = {frozenset(e) for e in tree}
    pool = [e for e in grid_edges if frozenset(e) not in tree_set]
    pick = rng.choice(len(pool), size=317 - len(tree), replace=False)
    edges = tree + [pool[int(i)] for i in sorted(pick)]
    assert len(edges) == 317

    feeds = sorted(corner_slots)
    hops = _hop_distances(total, edges, feeds)
    pipes = []
    for k, (a, b) in enumerate(edges):
        depth = min(hops[a], hops[b])
        if depth == 0:  # reservoir-incident transmission mains
            diameter, length = 0.7, 120.0
        else:
            diameter = 0.12 + 0.40 * np.exp(-depth / 7.0)
            length = round(rng.uniform(120.0, 380.0), 1)
        pipes.append(RawPipe(
            f"P{k + 1:03d}", names[a], names[b],
            length,
            round(diameter, 3),
            round(95.0 + 45.0 * rng.uniform(), 1),
        ))

    demands = {
        names[s]: round(rng.uniform(0.7, 2.3), 4) / 1000.0
        for s in range(total) if s not in corner_slots
    }
    return make_network(nodes, pipes, demands, {"day": DAY_PATTERN}, {})


def modena_like_sensors(net: Network) -> SensorConfig:
    """20 pressure sensors (the 4 reservoirs plus 16 spread junctions) and
    40 AMR nodes, mirroring the published instrumentation counts."""
    rng = np.random.default_rng(986101)
    jun = net.junction_indices
    pressure_j = rng.choice(jun, size=16, replace=False)
    pressure = np.concatenate([net.reservoir_indices, pressure_j])
    extra = rng.choice(np.setdiff1d(jun, pressure_j), size=24, replace=False)
    amr = np.concatenate([pressure_j, extra])
    return SensorConfig(pressure_nodes=tuple(int(i) for i in pressure),
                        amr_nodes=tuple(int(i) for i in sorted(amr)))
