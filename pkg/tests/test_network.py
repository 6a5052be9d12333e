import json

import numpy as np
import pytest

from hydrostate import benchmarks
from hydrostate.network import (
    JUNCTION,
    RESERVOIR,
    NetworkError,
    ParseError,
    RawPipe,
    SensorConfig,
    build_approx_incidence,
    build_gsi_adjacency,
    build_incidence,
    build_selection,
    make_network,
    parse_network,
    serialize_network,
    smoothing_operator,
    structural_incidence,
)

from conftest import build_net, random_connected_net


class TestGsiAdjacency:
    def test_two_node_weights(self, two_node_net):
        gm = build_gsi_adjacency(two_node_net)
        W = gm.W.toarray()
        assert W[0, 1] == W[1, 0] == pytest.approx(1.0 / 500.0)
        D = gm.D.toarray()
        assert D[0, 0] == D[1, 1] == pytest.approx(0.002)

    def test_laplacian_kernel(self, six_node_net, desk_net):
        for net in (six_node_net, desk_net):
            Ld = build_gsi_adjacency(net).Ld
            resid = np.abs(Ld @ np.ones(net.n_nodes)).max()
            scale = np.abs(Ld.toarray()).max()
            assert resid <= 1e-12 * scale

    def test_path4_dense_oracle(self, path4_net):
        # independent dense evaluation of (D - W) D^-2 (D - W), entry by entry
        net = path4_net
        n = net.n_nodes
        W = np.zeros((n, n))
        for p in net.pipes:
            W[p.source, p.sink] = W[p.sink, p.source] = 1.0 / p.length
        D = np.diag(W.sum(axis=1))
        Dinv2 = np.diag(1.0 / np.diag(D) ** 2)
        expected = (D - W) @ Dinv2 @ (D - W)
        got = build_gsi_adjacency(net).Ld.toarray()
        np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-15)

    def test_psd_up_to_modena_scale(self, six_node_net, desk_net):
        for net in (six_node_net, desk_net, benchmarks.modena_like()):
            Ld = build_gsi_adjacency(net).Ld.toarray()
            eig = np.linalg.eigvalsh(0.5 * (Ld + Ld.T))
            assert eig.min() >= -1e-10 * eig.max()

    def test_permutation_invariance(self, six_node_net):
        net = six_node_net
        perm = [3, 1, 4, 0, 2]  # permutation of the 5 junctions; reservoir stays last
        nodes = [net.nodes[i] for i in perm] + [net.nodes[5]]
        id_of = [nd.id for nd in net.nodes]
        pipes = [RawPipe(p.id, id_of[p.source], id_of[p.sink], p.length, p.diameter,
                         p.roughness) for p in net.pipes]
        net2 = make_network(nodes, pipes)
        W1 = build_gsi_adjacency(net).W.toarray()
        W2 = build_gsi_adjacency(net2).W.toarray()
        # map old index -> new index
        lookup = {nd.id: i for i, nd in enumerate(net2.nodes)}
        P = np.zeros_like(W1)
        for i, nd in enumerate(net.nodes):
            P[lookup[nd.id], i] = 1.0
        np.testing.assert_allclose(P @ W1 @ P.T, W2, rtol=0, atol=0)

    def test_degenerate_degree_named(self, two_node_net):
        from scipy import sparse

        W = sparse.csr_array(np.array([[0.0, 0.0], [0.0, 1.0]]))
        with pytest.raises(NetworkError, match="node index 0"):
            smoothing_operator(W)


class TestIncidence:
    def test_downhill_orientation(self, two_node_net):
        h = np.array([50.0, 40.0])
        M = build_incidence(two_node_net, h)
        assert (M @ h)[0] == pytest.approx(10.0)

    def test_tie_is_zero(self, two_node_net):
        h = np.array([42.0, 42.0])
        M = build_incidence(two_node_net, h).toarray()
        assert (M @ h)[0] == 0.0
        assert M[0, 0] == 1.0 and M[0, 1] == -1.0  # +1 at the lower node index

    def test_random_nets_nonnegative(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            net = random_connected_net(rng, n_junctions=5)
            h = rng.uniform(0, 60, net.n_nodes)
            M = build_incidence(net, h)
            prod = M @ h
            for k in range(net.n_pipes):  # exhaustive row scan
                assert prod[k] >= 0.0

    def test_rows_sum_to_zero(self, six_node_net):
        rng = np.random.default_rng(0)
        M = build_incidence(six_node_net, rng.uniform(0, 50, six_node_net.n_nodes))
        np.testing.assert_array_equal(np.asarray(M.sum(axis=1)).ravel(), 0.0)
        assert all(len(row.indices) == 2 for row in (M[[k], :] for k in range(M.shape[0])))

    def test_bad_reference_shape(self, six_node_net):
        with pytest.raises(NetworkError, match="one entry per node"):
            build_incidence(six_node_net, np.zeros(3))


class TestSelection:
    def test_single_pressure_row(self):
        net = build_net(
            [("A", JUNCTION, 0.0), ("B", JUNCTION, 0.0), ("R", RESERVOIR, 10.0, 10.0)],
            [("P1", "A", "B", 100.0, 0.2, 100.0), ("P2", "B", "R", 100.0, 0.2, 100.0)],
        )
        M = structural_incidence(net)
        S, _ = build_selection(net, SensorConfig(pressure_nodes=(2,)), M)
        np.testing.assert_array_equal(S.toarray(), [[0.0, 0.0, 1.0]])

    def test_all_amr_is_identity_selection(self, six_node_net):
        net = six_node_net
        M = structural_incidence(net)
        sensors = SensorConfig(pressure_nodes=(0,), amr_nodes=tuple(range(net.n_nodes)))
        _, M_a = build_selection(net, sensors, M)
        np.testing.assert_array_equal(M_a.toarray(), M.toarray())

    def test_selection_recovers_sensed_entries(self, six_node_net):
        rng = np.random.default_rng(3)
        sensors = SensorConfig(pressure_nodes=(4, 1, 5))
        S, _ = build_selection(six_node_net, sensors, structural_incidence(six_node_net))
        h = rng.uniform(0, 90, six_node_net.n_nodes)
        np.testing.assert_array_equal(S @ h, h[[4, 1, 5]])

    def test_out_of_range_index(self, six_node_net):
        with pytest.raises(NetworkError, match="out of range"):
            SensorConfig(pressure_nodes=(99,)).validate_against(six_node_net)

    def test_duplicate_sensor_rejected(self):
        with pytest.raises(NetworkError, match="duplicate"):
            SensorConfig(pressure_nodes=(1, 1))


class TestApproxIncidence:
    def test_negated_incidence(self, six_node_net):
        rng = np.random.default_rng(5)
        h = rng.uniform(0, 50, six_node_net.n_nodes)
        B = build_approx_incidence(six_node_net, h)
        M = build_incidence(six_node_net, h)
        np.testing.assert_array_equal(B.toarray(), -M.toarray())

    def test_reference_state_feasible(self, six_node_net):
        rng = np.random.default_rng(6)
        h = rng.uniform(0, 50, six_node_net.n_nodes)
        B = build_approx_incidence(six_node_net, h)
        for gamma in (1e-9, 0.5, 3.0):
            assert np.all(B @ h <= gamma + 1e-12)


MINIMAL_JSON = json.dumps({
    "nodes": [
        {"id": "J1", "kind": "junction", "elevation_m": 3.0},
        {"id": "J2", "kind": "junction", "elevation_m": 4.0},
        {"id": "R1", "kind": "reservoir", "elevation_m": 50.0, "head_m": 50.0},
    ],
    "pipes": [
        {"id": "P1", "from": "R1", "to": "J1", "length_m": 100.0, "diameter_m": 0.3,
         "roughness": 120.0},
        {"id": "P2", "from": "J1", "to": "J2", "length_m": 200.0, "diameter_m": 0.2,
         "roughness": 110.0},
    ],
    "demands": {"J1": 1.5, "J2": 2.0},
    "patterns": {"day": [1.0] * 24},
    "pattern_of": {"J1": "day", "J2": "day"},
})

MINIMAL_INP = """
[JUNCTIONS]
; id  elev  demand  pattern
J1  3.0  1.5  day
J2  4.0  2.0  day
[RESERVOIRS]
R1  50.0
[PIPES]
P1  R1  J1  100.0  300.0  120.0
P2  J1  J2  200.0  200.0  110.0
[PATTERNS]
day  1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0
day  1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0 1.0
[QUALITY]
J1  0.5
[END]
"""


class TestParser:
    def test_minimal_json(self):
        net, warnings = parse_network(MINIMAL_JSON, "json")
        assert warnings == []
        assert net.n_nodes == 3 and net.n_pipes == 2
        assert net.nodes[-1].kind == RESERVOIR
        assert net.base_demand[net.node_index("J2")] == pytest.approx(2.0e-3)

    def test_inp_unknown_section_warns(self):
        net, warnings = parse_network(MINIMAL_INP, "inp")
        assert any("QUALITY" in w for w in warnings)
        assert net.n_nodes == 3 and net.n_pipes == 2
        # mm converted to m
        assert net.pipes[0].diameter == pytest.approx(0.3)
        assert net.base_demand[net.node_index("J1")] == pytest.approx(1.5e-3)

    def test_inp_and_json_agree(self):
        net_j, _ = parse_network(MINIMAL_JSON, "json")
        net_i, _ = parse_network(MINIMAL_INP, "inp")
        assert serialize_network(net_j) == serialize_network(net_i)

    def test_round_trip_idempotent(self, six_node_net, desk_net):
        for net in (six_node_net, desk_net):
            text = serialize_network(net)
            net2, _ = parse_network(text, "json")
            assert serialize_network(net2) == text
            assert net2 == net

    def test_syntax_error_carries_line(self):
        bad = MINIMAL_INP.replace("P2  J1  J2  200.0  200.0  110.0",
                                  "P2  J1  J2  oops  200.0  110.0")
        with pytest.raises(ParseError, match="line"):
            parse_network(bad, "inp")

    def test_missing_required_section(self):
        with pytest.raises(ParseError, match="RESERVOIRS"):
            parse_network("[JUNCTIONS]\nJ1 1.0\n[PIPES]\n", "inp")

    def test_dangling_pipe_endpoint(self):
        bad = MINIMAL_INP.replace("P2  J1  J2", "P2  J1  NOPE")
        with pytest.raises(ParseError, match="NOPE"):
            parse_network(bad, "inp")

    def test_unknown_format(self):
        with pytest.raises(ParseError):
            parse_network("{}", "xml")


class TestNetworkInvariants:
    def test_self_loop_rejected(self):
        with pytest.raises(NetworkError, match="self-loop"):
            build_net(
                [("A", JUNCTION, 0.0), ("R", RESERVOIR, 10.0, 10.0)],
                [("P1", "A", "A", 100.0, 0.2, 100.0), ("P2", "A", "R", 100.0, 0.2, 100.0)],
            )

    def test_disconnected_rejected(self):
        with pytest.raises(NetworkError, match="not connected"):
            build_net(
                [("A", JUNCTION, 0.0), ("B", JUNCTION, 0.0), ("R", RESERVOIR, 10.0, 10.0)],
                [("P1", "A", "R", 100.0, 0.2, 100.0)],
            )

    def test_reservoir_required(self):
        with pytest.raises(NetworkError, match="reservoir"):
            build_net(
                [("A", JUNCTION, 0.0), ("B", JUNCTION, 0.0)],
                [("P1", "A", "B", 100.0, 0.2, 100.0)],
            )

    def test_positive_attributes_required(self):
        with pytest.raises(NetworkError, match="positive"):
            build_net(
                [("A", JUNCTION, 0.0), ("R", RESERVOIR, 10.0, 10.0)],
                [("P1", "A", "R", -5.0, 0.2, 100.0)],
            )

    def test_duplicate_ids_rejected(self):
        with pytest.raises(NetworkError, match="duplicate"):
            build_net(
                [("A", JUNCTION, 0.0), ("A", JUNCTION, 1.0), ("R", RESERVOIR, 10.0, 10.0)],
                [("P1", "A", "R", 100.0, 0.2, 100.0)],
            )

    def test_junctions_order_before_reservoirs(self, desk_net):
        kinds = [nd.kind for nd in desk_net.nodes]
        assert kinds == sorted(kinds, key=lambda k: k == RESERVOIR)
