"""Water network topology, graph matrices, and file parsing.

A network is an undirected graph of junctions and reservoirs connected by
pipes.  All estimation machinery works on matrices built here: the
length-weighted adjacency W with its degree matrix D and smoothing operator
Ld, the head-oriented incidence matrix M, the sensor selection matrices, and
the directionality matrix used by the interpolation constraints.

Node ordering is normalized at construction time: junctions first (in input
order), reservoirs last (in input order).  Every matrix and state vector in
the package uses this single indexing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

JUNCTION = "junction"
RESERVOIR = "reservoir"

# EPANET-style flow units accepted at I/O boundaries; internal flows are
# m3/s, so file values are divided by these (division keeps l/s round trips
# correctly rounded).
_FLOW_UNIT_DIVISOR = {
    "LPS": 1000.0,
    "LPM": 60000.0,
    "CMH": 3600.0,
    "CMS": 1.0,
}

LPS_TO_M3S = 1e-3


def lps_to_m3s(value: float) -> float:
    return value / 1000.0


def m3s_to_lps(value: float) -> float:
    return value * 1000.0


class NetworkError(ValueError):
    """Invalid network topology or attributes."""


class ParseError(ValueError):
    """Malformed network input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Node:
    id: str
    kind: str  # JUNCTION or RESERVOIR
    elevation: float  # m
    head: float | None = None  # fixed hydraulic head, reservoirs only (m)


@dataclass(frozen=True)
class Pipe:
    id: str
    source: int  # node index (structural orientation: as listed in the file)
    sink: int
    length: float  # m
    diameter: float  # m
    roughness: float  # Hazen-Williams coefficient, dimensionless


@dataclass(frozen=True)
class Network:
    """Immutable network: topology, pipe attributes, demand model.

    ``base_demand`` is in m3/s per node (zero at reservoirs).  ``patterns``
    maps pattern names to 24 hourly multipliers; ``pattern_of`` assigns a
    pattern name per node id (nodes without an entry use the single defined
    pattern, or a constant 1.0 if there are none).
    """

    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    base_demand: tuple[float, ...] = ()
    patterns: dict[str, tuple[float, ...]] = field(default_factory=dict)
    pattern_of: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.base_demand:
            object.__setattr__(self, "base_demand", (0.0,) * len(self.nodes))
        _validate(self)

    # -- basic views -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_pipes(self) -> int:
        return len(self.pipes)

    @property
    def junction_indices(self) -> np.ndarray:
        return np.array([i for i, nd in enumerate(self.nodes) if nd.kind == JUNCTION], dtype=int)

    @property
    def reservoir_indices(self) -> np.ndarray:
        return np.array([i for i, nd in enumerate(self.nodes) if nd.kind == RESERVOIR], dtype=int)

    @property
    def reservoir_heads(self) -> np.ndarray:
        return np.array([nd.head for nd in self.nodes if nd.kind == RESERVOIR], dtype=float)

    def node_index(self, node_id: str) -> int:
        for i, nd in enumerate(self.nodes):
            if nd.id == node_id:
                return i
        raise KeyError(node_id)

    def lengths(self) -> np.ndarray:
        return np.array([p.length for p in self.pipes], dtype=float)

    def diameters(self) -> np.ndarray:
        return np.array([p.diameter for p in self.pipes], dtype=float)

    def roughnesses(self) -> np.ndarray:
        return np.array([p.roughness for p in self.pipes], dtype=float)

    def adjacency_lists(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for p in self.pipes:
            out[p.source].append(p.sink)
            out[p.sink].append(p.source)
        return out

    def pattern_multiplier(self, node_id: str, hour: int) -> float:
        name = self.pattern_of.get(node_id)
        if name is None:
            if len(self.patterns) == 1:
                name = next(iter(self.patterns))
            else:
                return 1.0
        pat = self.patterns[name]
        return pat[hour % len(pat)]

    def demand_at_hour(self, hour: int) -> np.ndarray:
        """Base demands scaled by each node's hourly pattern multiplier, m3/s."""
        mult = np.array([self.pattern_multiplier(nd.id, hour) for nd in self.nodes])
        return np.asarray(self.base_demand) * mult


def _validate(net: Network) -> None:
    n = len(net.nodes)
    ids = [nd.id for nd in net.nodes]
    if len(set(ids)) != n:
        raise NetworkError("duplicate node ids")
    if len(net.base_demand) != n:
        raise NetworkError("base_demand length does not match node count")

    seen_reservoir = False
    for nd in net.nodes:
        if nd.kind not in (JUNCTION, RESERVOIR):
            raise NetworkError(f"node {nd.id}: unknown kind {nd.kind!r}")
        if nd.kind == RESERVOIR:
            seen_reservoir = True
            if nd.head is None or not math.isfinite(nd.head):
                raise NetworkError(f"reservoir {nd.id} has no fixed head")
        elif seen_reservoir:
            raise NetworkError("node ordering violated: junction after reservoir")
    if not seen_reservoir:
        raise NetworkError("network has no reservoir")

    for p in net.pipes:
        if not (0 <= p.source < n and 0 <= p.sink < n):
            raise NetworkError(f"pipe {p.id}: endpoint out of range")
        if p.source == p.sink:
            raise NetworkError(f"pipe {p.id} is a self-loop")
        if not (p.length > 0 and p.diameter > 0 and p.roughness > 0):
            raise NetworkError(f"pipe {p.id}: length, diameter, roughness must be positive")

    # connectivity of the undirected graph
    if n:
        adj = net.adjacency_lists()
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        if not seen.all():
            missing = [net.nodes[i].id for i in np.flatnonzero(~seen)]
            raise NetworkError(f"network is not connected (unreachable: {missing[:5]})")


def make_network(nodes, pipes, base_demand_by_id=None, patterns=None, pattern_of=None) -> Network:
    """Build a Network, normalizing node order to junctions-then-reservoirs.

    ``nodes``/``pipes`` are sequences of Node/Pipe-like tuples where pipe
    endpoints refer to node *ids*; indices are assigned here.
    """
    nodes = list(nodes)
    ordered = [nd for nd in nodes if nd.kind == JUNCTION] + [nd for nd in nodes if nd.kind == RESERVOIR]
    index = {nd.id: i for i, nd in enumerate(ordered)}
    if len(index) != len(ordered):
        raise NetworkError("duplicate node ids")

    fixed_pipes = []
    for p in pipes:
        try:
            src, snk = index[p.source], index[p.sink]
        except KeyError as exc:
            raise NetworkError(f"pipe {p.id}: dangling endpoint {exc.args[0]!r}") from None
        fixed_pipes.append(Pipe(p.id, src, snk, p.length, p.diameter, p.roughness))

    demand = [0.0] * len(ordered)
    for node_id, value in (base_demand_by_id or {}).items():
        if node_id not in index:
            raise NetworkError(f"demand for unknown node {node_id!r}")
        demand[index[node_id]] = float(value)

    return Network(
        nodes=tuple(ordered),
        pipes=tuple(fixed_pipes),
        base_demand=tuple(demand),
        patterns={k: tuple(float(x) for x in v) for k, v in (patterns or {}).items()},
        pattern_of=dict(pattern_of or {}),
    )


@dataclass(frozen=True)
class RawPipe:
    """Pipe record with id-based endpoints, used before index assignment."""

    id: str
    source: str
    sink: str
    length: float
    diameter: float
    roughness: float


@dataclass(frozen=True)
class SensorConfig:
    """Indices of pressure-sensed nodes and AMR (demand-metered) nodes."""

    pressure_nodes: tuple[int, ...]
    amr_nodes: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.pressure_nodes) < 1:
            raise NetworkError("at least one pressure sensor is required")
        for name, idxs in (("pressure", self.pressure_nodes), ("amr", self.amr_nodes)):
            if len(set(idxs)) != len(idxs):
                raise NetworkError(f"duplicate {name} sensor indices")

    def validate_against(self, net: Network) -> None:
        n = net.n_nodes
        for idx in (*self.pressure_nodes, *self.amr_nodes):
            if not (0 <= idx < n):
                raise NetworkError(f"sensor index {idx} out of range for n={n}")

    @staticmethod
    def from_ids(net: Network, pressure_ids, amr_ids=()) -> "SensorConfig":
        cfg = SensorConfig(
            pressure_nodes=tuple(net.node_index(i) if isinstance(i, str) else int(i) for i in pressure_ids),
            amr_nodes=tuple(net.node_index(i) if isinstance(i, str) else int(i) for i in amr_ids),
        )
        cfg.validate_against(net)
        return cfg


@dataclass(frozen=True)
class GraphMatrices:
    """Length-weighted adjacency W, degree D, and smoothing operator Ld."""

    W: sparse.csr_array
    D: sparse.csr_array
    Ld: sparse.csr_array


def adjacency_from_edge_values(net: Network, values) -> sparse.csr_array:
    """Symmetric n-by-n adjacency with values[k] at both endpoints of pipe k."""
    values = np.asarray(values, dtype=float)
    src = np.array([p.source for p in net.pipes])
    snk = np.array([p.sink for p in net.pipes])
    n = net.n_nodes
    W = sparse.coo_array(
        (np.concatenate([values, values]), (np.concatenate([src, snk]), np.concatenate([snk, src]))),
        shape=(n, n),
    )
    return W.tocsr()


def smoothing_operator(W: sparse.csr_array) -> sparse.csr_array:
    """Ld = (D - W) D^-2 (D - W) for the degree matrix D of W.

    Symmetric PSD by construction: Ld = B^T B with B = D^-1 (D - W).
    """
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise NetworkError(f"degenerate degree at node index {bad} (isolated or zero-weight)")
    L = sparse.diags_array(deg) - W
    B = sparse.diags_array(1.0 / deg) @ L
    return (B.T @ B).tocsr()


def build_gsi_adjacency(net: Network) -> GraphMatrices:
    """Inverse-pipe-length adjacency and its smoothing operator."""
    W = adjacency_from_edge_values(net, 1.0 / net.lengths())
    deg = np.asarray(W.sum(axis=1)).ravel()
    return GraphMatrices(W=W, D=sparse.diags_array(deg).tocsr(), Ld=smoothing_operator(W))


def build_incidence(net: Network, h_ref) -> sparse.csr_array:
    """Edge-node incidence oriented by reference heads.

    Row k has +1 at the endpoint with the higher reference head and -1 at
    the other, so M @ h_ref >= 0 componentwise.  Ties orient from the lower
    node index; the corresponding head difference is 0 either way.
    """
    h_ref = np.asarray(h_ref, dtype=float)
    if h_ref.shape != (net.n_nodes,):
        raise NetworkError(f"h_ref must have one entry per node, got shape {h_ref.shape}")
    rows, cols, vals = [], [], []
    for k, p in enumerate(net.pipes):
        i, j = p.source, p.sink
        hi, hj = h_ref[i], h_ref[j]
        if hi > hj or (hi == hj and i < j):
            up, down = i, j
        else:
            up, down = j, i
        rows += [k, k]
        cols += [up, down]
        vals += [1.0, -1.0]
    return sparse.coo_array((vals, (rows, cols)), shape=(net.n_pipes, net.n_nodes)).tocsr()


def structural_incidence(net: Network) -> sparse.csr_array:
    """Fixed incidence oriented source -> sink as pipes are listed (+1 at source)."""
    rows, cols, vals = [], [], []
    for k, p in enumerate(net.pipes):
        rows += [k, k]
        cols += [p.source, p.sink]
        vals += [1.0, -1.0]
    return sparse.coo_array((vals, (rows, cols)), shape=(net.n_pipes, net.n_nodes)).tocsr()


def build_selection(net: Network, sensors: SensorConfig, M: sparse.csr_array):
    """Sensorization matrix S and the AMR column selection M_a of M.

    S is n_s-by-n with one 1 per row at the sensed node; M_a keeps the
    columns of M at the AMR nodes, in configuration order.
    """
    sensors.validate_against(net)
    n = net.n_nodes
    n_s = len(sensors.pressure_nodes)
    S = sparse.coo_array(
        (np.ones(n_s), (np.arange(n_s), np.array(sensors.pressure_nodes, dtype=int))),
        shape=(n_s, n),
    ).tocsr()
    M_a = sparse.csr_array(M[:, list(sensors.amr_nodes)]) if sensors.amr_nodes else sparse.csr_array((net.n_pipes, 0))
    return S, M_a


def build_approx_incidence(net: Network, h_ref) -> sparse.csr_array:
    """Directionality matrix for the interpolation constraints: -M(h_ref).

    Each row encodes h_sink - h_source <= gamma for the flow direction
    inferred from the reference heads, so the reference state itself is
    feasible for any positive slack.
    """
    return -build_incidence(net, h_ref)


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------

_INP_KNOWN = {"JUNCTIONS", "RESERVOIRS", "PIPES", "DEMANDS", "PATTERNS", "OPTIONS", "END"}
_INP_REQUIRED = {"JUNCTIONS", "RESERVOIRS", "PIPES"}


def parse_network(text: str, fmt: str = "json") -> tuple[Network, list[str]]:
    """Parse a network from JSON or the supported INP subset.

    Returns the network plus a list of warnings (e.g. skipped INP sections).
    """
    if fmt == "json":
        return _parse_json(text), []
    if fmt == "inp":
        return _parse_inp(text)
    raise ParseError(f"unknown format {fmt!r}")


def load_network(path) -> tuple[Network, list[str]]:
    """Read a network file, inferring the format from the extension."""
    from pathlib import Path

    path = Path(path)
    fmt = "inp" if path.suffix.lower() == ".inp" else "json"
    return parse_network(path.read_text(), fmt)


def _parse_json(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), line=exc.lineno) from None

    for key in ("nodes", "pipes"):
        if key not in doc:
            raise ParseError(f"missing required key {key!r}")

    nodes = []
    for rec in doc["nodes"]:
        kind = rec["kind"]
        head = rec.get("head_m")
        nodes.append(Node(str(rec["id"]), kind, float(rec.get("elevation_m", 0.0)),
                          None if head is None else float(head)))
    pipes = [
        RawPipe(str(r["id"]), str(r["from"]), str(r["to"]),
                float(r["length_m"]), float(r["diameter_m"]), float(r["roughness"]))
        for r in doc["pipes"]
    ]
    demands = {str(k): lps_to_m3s(float(v)) for k, v in doc.get("demands", {}).items()}
    patterns = {str(k): [float(x) for x in v] for k, v in doc.get("patterns", {}).items()}
    pattern_of = {str(k): str(v) for k, v in doc.get("pattern_of", {}).items()}
    try:
        return make_network(nodes, pipes, demands, patterns, pattern_of)
    except NetworkError as exc:
        raise ParseError(str(exc)) from None


def serialize_network(net: Network) -> str:
    """JSON form of a network.

    parse and serialize are mutually idempotent: anything that came through
    the parser round-trips exactly (demand values are converted at the l/s
    boundary, so a never-serialized in-memory network may differ by one ulp
    on the first pass).
    """
    doc = {
        "nodes": [
            {"id": nd.id, "kind": nd.kind, "elevation_m": nd.elevation}
            | ({"head_m": nd.head} if nd.head is not None else {})
            for nd in net.nodes
        ],
        "pipes": [
            {
                "id": p.id,
                "from": net.nodes[p.source].id,
                "to": net.nodes[p.sink].id,
                "length_m": p.length,
                "diameter_m": p.diameter,
                "roughness": p.roughness,
            }
            for p in net.pipes
        ],
        "demands": {
            nd.id: m3s_to_lps(net.base_demand[i])
            for i, nd in enumerate(net.nodes)
            if net.base_demand[i] != 0.0
        },
        "patterns": {k: list(v) for k, v in net.patterns.items()},
    }
    if net.pattern_of:
        doc["pattern_of"] = dict(net.pattern_of)
    return json.dumps(doc, indent=2, sort_keys=True)


def _parse_inp(text: str) -> tuple[Network, list[str]]:
    """Parse the EPANET 2.0 INP subset.

    Supported sections: [JUNCTIONS], [RESERVOIRS], [PIPES], [DEMANDS],
    [PATTERNS], plus Units from [OPTIONS].  Everything else is skipped with
    a warning.  Demands are in the file's flow units (LPS unless stated),
    diameters in mm, lengths in m.
    """
    warnings: list[str] = []
    section = None
    seen: set[str] = set()
    junctions: list[tuple[str, float, float, str | None]] = []  # id, elev, demand, pattern
    reservoirs: list[tuple[str, float]] = []
    pipes: list[RawPipe] = []
    demands: list[tuple[str, float, str | None, int]] = []
    patterns: dict[str, list[float]] = {}
    flow_unit = "LPS"

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", line=lineno)
            section = line[1:-1].strip().upper()
            seen.add(section)
            if section not in _INP_KNOWN:
                warnings.append(f"skipped section {section}")
            continue
        if section is None:
            raise ParseError("data before any section header", line=lineno)
        if section not in _INP_KNOWN or section == "END":
            continue

        tok = line.split()
        try:
            if section == "JUNCTIONS":
                pat = tok[3] if len(tok) > 3 else None
                junctions.append((tok[0], float(tok[1]),
                                  float(tok[2]) if len(tok) > 2 else 0.0, pat))
            elif section == "RESERVOIRS":
                reservoirs.append((tok[0], float(tok[1])))
            elif section == "PIPES":
                # id node1 node2 length diameter roughness [minorloss] [status]
                pipes.append(RawPipe(tok[0], tok[1], tok[2], float(tok[3]),
                                     float(tok[4]) * 1e-3, float(tok[5])))
            elif section == "DEMANDS":
                demands.append((tok[0], float(tok[1]), tok[2] if len(tok) > 2 else None, lineno))
            elif section == "PATTERNS":
                patterns.setdefault(tok[0], []).extend(float(x) for x in tok[1:])
            elif section == "OPTIONS":
                if tok[0].upper() == "UNITS" and len(tok) > 1:
                    flow_unit = tok[1].upper()
        except (ValueError, IndexError):
            raise ParseError(f"malformed {section} record: {line!r}", line=lineno) from None

    missing = _INP_REQUIRED - seen
    if missing:
        raise ParseError(f"missing required section(s): {', '.join(sorted(missing))}")
    divisor = _FLOW_UNIT_DIVISOR.get(flow_unit)
    if divisor is None:
        raise ParseError(f"unsupported flow units {flow_unit!r}")

    nodes = [Node(jid, JUNCTION, elev) for jid, elev, _, _ in junctions]
    nodes += [Node(rid, RESERVOIR, head, head) for rid, head in reservoirs]

    demand_by_id = {jid: dem / divisor for jid, _, dem, _ in junctions if dem}
    pattern_of = {jid: pat for jid, _, _, pat in junctions if pat}
    junction_ids = {jid for jid, *_ in junctions}
    for node_id, value, pat, lineno in demands:
        if node_id not in junction_ids:
            raise ParseError(f"demand for unknown junction {node_id!r}", line=lineno)
        demand_by_id[node_id] = value / divisor
        if pat:
            pattern_of[node_id] = pat

    for name in pattern_of.values():
        if name not in patterns:
            raise ParseError(f"undefined pattern {name!r}")

    try:
        net = make_network(nodes, pipes, demand_by_id, patterns, pattern_of)
    except NetworkError as exc:
        raise ParseError(str(exc)) from None
    return net, warnings
