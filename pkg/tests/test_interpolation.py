import numpy as np
import pytest

import hydrostate as hs
from hydrostate.interpolation import (
    GAMMA_MIN,
    GsiProblem,
    QpError,
    aw_edge_values,
    aw_weights,
    awgsi_estimate,
    awgsi_heads,
    gsi_estimate,
    gsi_kkt_residuals,
    gsi_weights,
)
from hydrostate.hydraulics import conductivity, solve_steady_state
from hydrostate.network import (
    SensorConfig,
    build_approx_incidence,
    build_gsi_adjacency,
    build_selection,
    smoothing_operator,
    structural_incidence,
)

# frozen by the projected-gradient + Dykstra oracle below (30k iterations)
SIX_NODE_OBJECTIVE = 0.001070704905140388


@pytest.fixture(scope="module")
def six_problem(six_node_net):
    net = six_node_net
    cond = conductivity(net)
    h_ref = solve_steady_state(net, cond, np.asarray(net.base_demand)[net.junction_indices])
    sens = [net.node_index("R"), net.node_index("C")]
    S, _ = build_selection(net, SensorConfig(pressure_nodes=tuple(sens)),
                           structural_incidence(net))
    h_s = h_ref[sens] + np.array([0.02, -0.03])
    B = build_approx_incidence(net, h_ref)
    gm = build_gsi_adjacency(net)
    return net, cond, h_ref, GsiProblem(gm.Ld, S, h_s, B, 10.0), np.array(sens)


def pg_dykstra_oracle(problem, x0, iterations=15000, sweeps=25):
    """Long-run first-order method: projected gradient with Dykstra's
    alternating projections onto the constraint intersection."""
    Ld = problem.Ld.toarray()
    B = problem.B_hat.toarray()
    S = problem.S.toarray()
    sens = np.array([int(np.argmax(row)) for row in S])
    n = Ld.shape[0]
    m = B.shape[0]
    G = np.zeros((m + 1, n + 1))
    G[:m, :n] = B
    G[:m, n] = -1.0
    G[m, n] = -1.0
    g = np.zeros(m + 1)
    g[m] = -GAMMA_MIN
    H = np.zeros((n + 1, n + 1))
    H[:n, :n] = Ld
    H[n, n] = problem.gamma_weight

    def project(x):
        p = [np.zeros_like(x) for _ in range(m + 2)]
        for _ in range(sweeps):
            for i in range(m + 2):
                y = x + p[i]
                if i == m + 1:
                    z = y.copy()
                    z[sens] = problem.h_s
                else:
                    viol = G[i] @ y - g[i]
                    z = y if viol <= 0 else y - viol * G[i] / (G[i] @ G[i])
                p[i] = y - z
                x = z
        return x

    t = 1.0 / (np.linalg.eigvalsh(H).max() * 1.5)
    x = project(x0)
    for _ in range(iterations):
        x = project(x - t * (H @ x))
    return x, 0.5 * x @ H @ x


class TestGsiEstimate:
    def test_fully_sensed_reproduces_measurements(self, six_node_net):
        net = six_node_net
        gm = build_gsi_adjacency(net)
        S, _ = build_selection(net, SensorConfig(pressure_nodes=tuple(range(net.n_nodes))),
                               structural_incidence(net))
        rng = np.random.default_rng(1)
        h_ref = rng.uniform(40, 50, net.n_nodes)
        h_s = rng.uniform(40, 50, net.n_nodes)
        sol = gsi_estimate(GsiProblem(gm.Ld, S, h_s, build_approx_incidence(net, h_ref), 10.0))
        np.testing.assert_allclose(sol.h, h_s, atol=1e-9)
        assert sol.gamma >= GAMMA_MIN

    def test_uniform_measurements_constant_field(self, six_node_net):
        net = six_node_net
        gm = build_gsi_adjacency(net)
        sens = (0, 2, 5)
        S, _ = build_selection(net, SensorConfig(pressure_nodes=sens),
                               structural_incidence(net))
        h_ref = np.linspace(50, 45, net.n_nodes)
        sol = gsi_estimate(GsiProblem(gm.Ld, S, np.full(3, 47.0),
                                      build_approx_incidence(net, h_ref), 10.0))
        np.testing.assert_allclose(sol.h, 47.0, atol=1e-7)
        obj = 0.5 * (sol.h @ gm.Ld.toarray() @ sol.h + 10.0 * sol.gamma**2)
        assert obj < 1e-12

    def test_six_node_matches_projected_gradient_oracle(self, six_problem):
        net, _, h_ref, problem, _ = six_problem
        sol = gsi_estimate(problem)
        Ld = problem.Ld.toarray()
        obj = 0.5 * (sol.h @ Ld @ sol.h + problem.gamma_weight * sol.gamma**2)
        assert obj == pytest.approx(SIX_NODE_OBJECTIVE, rel=1e-8)
        _, obj_pg = pg_dykstra_oracle(problem, np.concatenate([h_ref, [1.0]]))
        assert obj == pytest.approx(obj_pg, rel=1e-8)

    def test_kkt_residuals(self, six_problem):
        _, _, _, problem, _ = six_problem
        sol = gsi_estimate(problem)
        res = gsi_kkt_residuals(problem, sol)
        assert res["eq_feasibility"] < 1e-9
        assert res["ineq_feasibility"] < 1e-9
        assert res["stationarity"] < 1e-6
        assert res["complementarity"] < 1e-6

    def test_inconsistent_duplicate_sensors(self, six_node_net):
        net = six_node_net
        gm = build_gsi_adjacency(net)
        from scipy import sparse

        # two rows selecting the same node with conflicting values
        S = sparse.csr_array(np.array([[1.0, 0, 0, 0, 0, 0], [1.0, 0, 0, 0, 0, 0]]))
        h_ref = np.linspace(50, 45, net.n_nodes)
        problem = GsiProblem(gm.Ld, S, np.array([47.0, 46.0]),
                             build_approx_incidence(net, h_ref), 10.0)
        with pytest.raises(QpError):
            gsi_estimate(problem)


class TestAwWeights:
    def test_floor_active(self, six_node_net):
        net = six_node_net
        cond = conductivity(net)
        h_flatish = np.full(net.n_nodes, 30.0)
        w = aw_weights(net, cond, h_flatish)
        # frozen: sigma^0.54 * (1e-4)^-0.46 for each pipe
        expected = cond.sigma**0.54 * 1e-4**-0.46
        got = np.array([w.omega[p.source, p.sink] for p in net.pipes])
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_monotone_in_head_difference(self):
        vals = aw_edge_values(hs.Conductivity(sigma=np.full(3, 0.02), tau=np.full(3, 50.0)),
                              [0.1, 0.5, 2.5])
        assert vals[0] > vals[1] > vals[2]

    def test_arbitrary_precision_value(self):
        # frozen from a 60-digit evaluation at sigma=0.02, dh=0.37
        cond = hs.Conductivity(sigma=np.array([0.02]), tau=np.array([50.0]))
        got = aw_edge_values(cond, [0.37])[0]
        assert got == pytest.approx(0.1910659968842539269047155, rel=1e-12)
        floored = aw_edge_values(cond, [1e-6])[0]
        assert floored == pytest.approx(8.366738542567478194120941, rel=1e-12)

    def test_symmetry_and_row_stochastic(self, desk_net):
        cond = conductivity(desk_net)
        rng = np.random.default_rng(4)
        w = aw_weights(desk_net, cond, rng.uniform(40, 60, desk_net.n_nodes))
        om = w.omega.toarray()
        np.testing.assert_array_equal(om, om.T)
        rows = (om / w.phi[:, None]).sum(axis=1)
        np.testing.assert_allclose(rows, 1.0, atol=1e-12)

    def test_conductivity_scaling(self, six_node_net):
        from dataclasses import replace

        net = six_node_net
        cond = conductivity(net)
        rng = np.random.default_rng(9)
        h_ref = rng.uniform(40, 50, net.n_nodes)
        s = 3.7
        w1 = aw_weights(net, cond, h_ref)
        w2 = aw_weights(net, replace(cond, sigma=s * cond.sigma, tau=cond.tau / s), h_ref)
        np.testing.assert_allclose(w2.omega.toarray(), s**0.54 * w1.omega.toarray(),
                                   rtol=1e-12)
        # argmin of the residual interpolation is unchanged under the scaling
        sens = (0, 3)
        S, _ = build_selection(net, SensorConfig(pressure_nodes=sens),
                               structural_incidence(net))
        dh_s = np.array([0.05, -0.1])
        r1 = awgsi_estimate(smoothing_operator(w1.omega), S, dh_s)
        r2 = awgsi_estimate(smoothing_operator(w2.omega), S, dh_s)
        np.testing.assert_allclose(r1, r2, atol=1e-9)


class TestAwgsiEstimate:
    def test_zero_residual(self, six_node_net):
        net = six_node_net
        cond = conductivity(net)
        w = aw_weights(net, cond, np.linspace(50, 45, net.n_nodes))
        S, _ = build_selection(net, SensorConfig(pressure_nodes=(0, 4)),
                               structural_incidence(net))
        dh = awgsi_estimate(smoothing_operator(w.omega), S, np.zeros(2))
        np.testing.assert_allclose(dh, 0.0, atol=1e-12)

    def test_fully_sensed(self, six_node_net):
        net = six_node_net
        cond = conductivity(net)
        w = aw_weights(net, cond, np.linspace(50, 45, net.n_nodes))
        S, _ = build_selection(net, SensorConfig(pressure_nodes=tuple(range(net.n_nodes))),
                               structural_incidence(net))
        rng = np.random.default_rng(12)
        dh_s = rng.uniform(-1, 1, net.n_nodes)
        np.testing.assert_allclose(awgsi_estimate(smoothing_operator(w.omega), S, dh_s),
                                   dh_s, atol=1e-9)

    def test_null_space_elimination_oracle(self, six_node_net):
        net = six_node_net
        cond = conductivity(net)
        rng = np.random.default_rng(13)
        w = aw_weights(net, cond, rng.uniform(45, 50, net.n_nodes))
        L = smoothing_operator(w.omega).toarray()
        sens = np.array([1, 4])
        S, _ = build_selection(net, SensorConfig(pressure_nodes=tuple(sens)),
                               structural_incidence(net))
        dh_s = np.array([0.2, -0.4])
        got = awgsi_estimate(L, S, dh_s)
        # oracle: eliminate the pinned coordinates, solve the reduced system
        free = np.setdiff1d(np.arange(net.n_nodes), sens)
        u = np.linalg.solve(L[np.ix_(free, free)], -L[np.ix_(free, sens)] @ dh_s)
        expected = np.zeros(net.n_nodes)
        expected[sens] = dh_s
        expected[free] = u
        np.testing.assert_allclose(got, expected, atol=1e-8)

    def test_equality_constraints_inf_norm(self, desk_net, desk_sensors):
        cond = conductivity(desk_net)
        rng = np.random.default_rng(14)
        w = aw_weights(desk_net, cond, rng.uniform(40, 60, desk_net.n_nodes))
        S, _ = build_selection(desk_net, desk_sensors, structural_incidence(desk_net))
        dh_s = rng.uniform(-0.5, 0.5, len(desk_sensors.pressure_nodes))
        dh = awgsi_estimate(smoothing_operator(w.omega), S, dh_s)
        assert np.abs(S @ dh - dh_s).max() < 1e-9

    def test_objective_below_random_feasible(self, six_node_net):
        net = six_node_net
        cond = conductivity(net)
        rng = np.random.default_rng(15)
        w = aw_weights(net, cond, rng.uniform(45, 50, net.n_nodes))
        L = smoothing_operator(w.omega).toarray()
        sens = np.array([0, 3])
        S, _ = build_selection(net, SensorConfig(pressure_nodes=tuple(sens)),
                               structural_incidence(net))
        dh_s = np.array([0.15, -0.25])
        dh = awgsi_estimate(L, S, dh_s)
        obj = dh @ L @ dh
        free = np.setdiff1d(np.arange(net.n_nodes), sens)
        for _ in range(105):
            cand = np.zeros(net.n_nodes)
            cand[sens] = dh_s
            cand[free] = rng.uniform(-1.0, 1.0, free.size)
            assert obj <= cand @ L @ cand + 1e-12


class TestAwgsiHeads:
    def test_no_leak_signature(self, six_node_net):
        net = six_node_net
        cond = conductivity(net)
        rng = np.random.default_rng(16)
        h_nom = rng.uniform(45, 50, net.n_nodes)
        S, _ = build_selection(net, SensorConfig(pressure_nodes=(0, 3)),
                               structural_incidence(net))
        res = awgsi_heads(net, cond, h_nom, S, S @ h_nom)
        np.testing.assert_allclose(res.h0, h_nom, atol=1e-9)

    def test_sensed_entries_match_leak_measurements(self, six_node_net):
        net = six_node_net
        cond = conductivity(net)
        rng = np.random.default_rng(17)
        h_nom = rng.uniform(45, 50, net.n_nodes)
        S, _ = build_selection(net, SensorConfig(pressure_nodes=(1, 5)),
                               structural_incidence(net))
        h_s_leak = S @ h_nom - np.array([0.3, 0.05])
        res = awgsi_heads(net, cond, h_nom, S, h_s_leak)
        assert np.abs(S @ res.h0 - h_s_leak).max() < 1e-9

    def test_leak_scenario_improves_on_reference(self, loaded_net, loaded_sensors):
        # synthetic leak: the interpolated state must beat the leak-free
        # reference as an estimate of the leak state
        from hydrostate import benchmarks
        from hydrostate.scenario import ScenarioSpec, Uncertainty, generate_pair

        net, sensors = loaded_net, loaded_sensors
        cond = conductivity(net)
        jun = net.junction_indices
        leak = benchmarks.remote_leak_node(net, sensors)
        spec = ScenarioSpec(hours=(9,), seed=21, leak_node=leak, leak_m3s=0.0045,
                            uncertainty=Uncertainty())
        nom, lk = generate_pair(net, sensors, spec)
        S, _ = build_selection(net, sensors, structural_incidence(net))
        gm = build_gsi_adjacency(net)
        h_model = solve_steady_state(net, cond, net.demand_at_hour(9)[jun])
        ns = len(sensors.pressure_nodes)
        h_nom_est = gsi_estimate(GsiProblem(gm.Ld, S, nom.measurements[0, :ns],
                                            build_approx_incidence(net, h_model), 10.0)).h
        res = awgsi_heads(net, cond, h_nom_est, S, lk.measurements[0, :ns])
        truth = lk.true_heads[0]
        assert hs.rmse(truth, res.h0) < hs.rmse(truth, h_nom_est)


class TestGsiWeights:
    def test_pattern_matches_edges(self, six_node_net):
        w = gsi_weights(six_node_net)
        om = w.omega.toarray()
        for p in six_node_net.pipes:
            assert om[p.source, p.sink] == pytest.approx(1.0 / p.length)
        assert np.count_nonzero(om) == 2 * six_node_net.n_pipes
