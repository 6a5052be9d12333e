import numpy as np
import pytest

from hydrostate import benchmarks
from hydrostate.network import JUNCTION, RESERVOIR, Node, RawPipe, make_network


def build_net(node_specs, pipe_specs, demands=None, patterns=None):
    """Compact fixture builder.

    node_specs: (id, kind, elevation[, head]); pipe_specs: (id, from, to,
    length, diameter, roughness); demands in l/s by node id.
    """
    nodes = [Node(s[0], s[1], s[2], s[3] if len(s) > 3 else None) for s in node_specs]
    pipes = [RawPipe(*p) for p in pipe_specs]
    demands_si = {k: v / 1000.0 for k, v in (demands or {}).items()}
    return make_network(nodes, pipes, demands_si, patterns or {}, {})


@pytest.fixture(scope="session")
def two_node_net():
    return build_net(
        [("A", RESERVOIR, 50.0, 50.0), ("B", JUNCTION, 5.0)],
        [("P1", "A", "B", 500.0, 0.3, 120.0)],
    )


@pytest.fixture(scope="session")
def line3_net():
    # R(100 m) - A - B, used by the nested-bisection solver oracle
    return build_net(
        [("R", RESERVOIR, 100.0, 100.0), ("A", JUNCTION, 10.0), ("B", JUNCTION, 8.0)],
        [("P1", "R", "A", 800.0, 0.25, 110.0), ("P2", "A", "B", 600.0, 0.2, 120.0)],
    )


@pytest.fixture(scope="session")
def path4_net():
    return build_net(
        [("R", RESERVOIR, 60.0, 60.0), ("N1", JUNCTION, 5.0),
         ("N2", JUNCTION, 5.0), ("N3", JUNCTION, 5.0)],
        [("P1", "R", "N1", 100.0, 0.3, 120.0), ("P2", "N1", "N2", 200.0, 0.25, 115.0),
         ("P3", "N2", "N3", 400.0, 0.2, 110.0)],
    )


@pytest.fixture(scope="session")
def six_node_net():
    # small loop: R - A - B - C - D - E plus chord A-D
    return build_net(
        [("R", RESERVOIR, 50.0, 50.0), ("A", JUNCTION, 4.0), ("B", JUNCTION, 5.0),
         ("C", JUNCTION, 3.0), ("D", JUNCTION, 6.0), ("E", JUNCTION, 2.0)],
        [("P1", "R", "A", 300.0, 0.3, 120.0), ("P2", "A", "B", 200.0, 0.25, 110.0),
         ("P3", "B", "C", 400.0, 0.2, 130.0), ("P4", "C", "D", 250.0, 0.2, 100.0),
         ("P5", "D", "E", 350.0, 0.15, 120.0), ("P6", "A", "D", 500.0, 0.2, 115.0)],
        demands={"A": 2.0, "B": 3.0, "C": 1.5, "D": 2.5, "E": 1.0},
    )


@pytest.fixture(scope="session")
def small_net():
    return benchmarks.small_network()


@pytest.fixture(scope="session")
def small_sensors(small_net):
    return benchmarks.small_sensors(small_net)


@pytest.fixture(scope="session")
def loaded_net():
    return benchmarks.loaded_small_network()


@pytest.fixture(scope="session")
def loaded_sensors(loaded_net):
    return benchmarks.small_sensors(loaded_net)


@pytest.fixture(scope="session")
def desk_net():
    return benchmarks.desk_network()


@pytest.fixture(scope="session")
def desk_sensors(desk_net):
    return benchmarks.desk_sensors(desk_net)


def random_connected_net(rng, n_junctions=5, extra_edges=2):
    """Random connected network with one reservoir, for property checks."""
    ids = [f"N{i}" for i in range(n_junctions)] + ["R"]
    nodes = [Node(i, JUNCTION, float(rng.uniform(0, 10))) for i in ids[:-1]]
    nodes.append(Node("R", RESERVOIR, 50.0, 50.0))
    pipes = []
    order = rng.permutation(len(ids))
    for k in range(1, len(ids)):
        a, b = ids[order[k]], ids[order[rng.integers(0, k)]]
        pipes.append(RawPipe(f"T{k}", a, b, float(rng.uniform(100, 900)),
                             float(rng.uniform(0.1, 0.4)), float(rng.uniform(90, 140))))
    for k in range(extra_edges):
        a, b = rng.choice(ids, 2, replace=False)
        if any({p.source, p.sink} == {a, b} for p in pipes):
            continue
        pipes.append(RawPipe(f"X{k}", a, b, float(rng.uniform(100, 900)),
                             float(rng.uniform(0.1, 0.4)), float(rng.uniform(90, 140))))
    demands = {i: float(rng.uniform(0.5, 3.0)) for i in ids[:-1]}
    return make_network(nodes, pipes, demands, {}, {})
