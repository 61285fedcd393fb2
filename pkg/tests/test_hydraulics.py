import json

import numpy as np
import pytest

import capnet as cp
from capnet.errors import FlowSolverError
from capnet.hydraulics import (solve_flows_partial, valve_positions_for_flows)


def single_consumer_net(pump_dp=0.6e6):
    return cp.HydraulicNetwork("23", [cp.Pipe("23", "A", 0.9)],
                               [cp.Consumer("A", 2.5)], pump_dp)


def scalar_balance_bisect(v, s=0.9, s_c=2.5, dp=0.6e6):
    """Independent oracle: bisection on the single-consumer pressure balance."""
    def residual(q):
        r = s_c + 5.0 + 30.0 / (v + 1.001) ** 2
        return dp - 2.0 * s * q * abs(q) - r * q * abs(q)
    lo, hi = 0.0, 1e4
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestSingleConsumer:
    def test_full_open_matches_closed_form(self):
        net = single_consumer_net()
        q = cp.solve_flows(net, np.array([1.0]))
        closed = np.sqrt(0.6e6 / (2 * 0.9 + 2.5 + 5 + 30 / 2.001 ** 2))
        assert abs(q[0] - closed) / closed < 1e-6
        assert q[0] == pytest.approx(scalar_balance_bisect(1.0), rel=1e-9)

    def test_closed_valve_matches_closed_form(self):
        net = single_consumer_net()
        q = cp.solve_flows(net, np.array([-1.0]))
        closed = np.sqrt(0.6e6 / (2 * 0.9 + 2.5 + 5 + 30 / 0.001 ** 2))
        assert abs(q[0] - closed) / closed < 1e-6
        assert q[0] == pytest.approx(0.141, abs=5e-4)
        assert q[0] == pytest.approx(scalar_balance_bisect(-1.0), rel=1e-9)

    def test_bisection_oracle_across_positions(self):
        net = single_consumer_net()
        for v in (-0.9, -0.5, 0.0, 0.5, 0.99):
            q = cp.solve_flows(net, np.array([v]))
            assert q[0] == pytest.approx(scalar_balance_bisect(v), rel=1e-9)


class TestNetworkSolver:
    def test_symmetric_star_equal_flows(self):
        net = cp.HydraulicNetwork(
            "P", [cp.Pipe("P", "A", 0.5), cp.Pipe("A", "L", 0.1), cp.Pipe("A", "R", 0.1)],
            [cp.Consumer("L", 2.5), cp.Consumer("R", 2.5)], 1e5)
        for v in (0.3, -0.4, 1.0):
            q = cp.solve_flows(net, np.array([v, v]))
            assert q[0] == pytest.approx(q[1], rel=1e-12)

    def test_mass_conservation(self):
        net = cp.build_dhn_network()
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = rng.uniform(-1, 1, net.n_consumers)
            sol = cp.solve_flows(net, v, full_output=True)
            assert sol.mass_residual < 1e-8

    def test_flows_strictly_positive(self):
        net = cp.build_dhn_network()
        rng = np.random.default_rng(1)
        v = rng.uniform(-1, 1, net.n_consumers)
        assert np.all(cp.solve_flows(net, v) > 0)

    def test_deterministic_bit_identical(self):
        net = cp.build_dhn_network()
        v = np.linspace(-0.9, 0.9, net.n_consumers)
        q1 = cp.solve_flows(net, v)
        q2 = cp.solve_flows(net, v)
        np.testing.assert_array_equal(q1, q2)

    def test_warm_start_converges_fast(self):
        net = cp.build_dhn_network()
        v = np.full(net.n_consumers, 0.2)
        sol0 = cp.solve_flows(net, v, full_output=True)
        v2 = v + 0.01
        sol1 = cp.solve_flows(net, v2, warm_start=sol0.q, full_output=True)
        assert sol1.iterations <= 5
        np.testing.assert_allclose(sol1.q, cp.solve_flows(net, v2), rtol=1e-9)

    def test_pressure_scaling_sqrt(self):
        base = cp.build_dhn_network(1.0)
        scaled = cp.build_dhn_network(0.25)
        v = np.full(base.n_consumers, 0.1)
        np.testing.assert_allclose(cp.solve_flows(scaled, v),
                                   0.5 * cp.solve_flows(base, v), rtol=1e-9)

    def test_zero_pump_pressure_is_solver_error(self):
        net = cp.build_dhn_network(0.0)
        with pytest.raises(FlowSolverError):
            cp.solve_flows(net, np.zeros(net.n_consumers))

    def test_aggregate_flow_monotone_in_valves(self):
        # opening any single valve strictly raises the total throughput and
        # strictly lowers everyone else's share
        net = cp.build_dhn_network()
        rng = np.random.default_rng(2)
        v = rng.uniform(-0.5, 0.5, net.n_consumers)
        q = cp.solve_flows(net, v)
        for i in (0, 7, 13, 21):
            v2 = v.copy()
            v2[i] += 0.3
            q2 = cp.solve_flows(net, v2)
            assert q2.sum() > q.sum()
            others = np.arange(net.n_consumers) != i
            assert np.all(q2[others] < q[others])

    def test_tree_validation(self):
        with pytest.raises(ValueError):
            cp.HydraulicNetwork("P", [cp.Pipe("P", "A", 1.0), cp.Pipe("B", "A", 1.0)],
                                [cp.Consumer("A")], 1e5)
        with pytest.raises(ValueError):
            cp.HydraulicNetwork("P", [cp.Pipe("A", "B", 1.0)],
                                [cp.Consumer("B")], 1e5)
        with pytest.raises(ValueError):
            cp.HydraulicNetwork("P", [cp.Pipe("P", "A", 1.0)],
                                [cp.Consumer("missing")], 1e5)

    def test_jacobian_matches_finite_differences(self):
        net = cp.build_dhn_network()
        v = np.full(net.n_consumers, 0.3)
        J = cp.flow_sensitivity(net, v)
        q0 = cp.solve_flows(net, v)
        eps = 1e-6
        for j in (0, 11, 21):
            vp = v.copy()
            vp[j] += eps
            fd = (cp.solve_flows(net, vp) - q0) / eps
            np.testing.assert_allclose(J[:, j], fd, atol=1e-4 * np.max(np.abs(fd)))


class TestInverseMaps:
    def test_valve_positions_invert_solved_flows(self):
        net = cp.build_dhn_network()
        rng = np.random.default_rng(4)
        v = rng.uniform(-0.8, 0.9, net.n_consumers)
        q = cp.solve_flows(net, v)
        np.testing.assert_allclose(valve_positions_for_flows(net, q), v, atol=1e-7)

    def test_partial_solve_consistent_with_full(self):
        net = cp.build_dhn_network()
        v = np.full(net.n_consumers, 0.5)
        q_full = cp.solve_flows(net, v)
        fixed = np.full(net.n_consumers, np.nan)
        fixed[::2] = q_full[::2]
        q_mixed = solve_flows_partial(net, v, fixed)
        np.testing.assert_allclose(q_mixed, q_full, rtol=1e-8)


class TestBuildings:
    def test_heat_coefficient(self):
        bld = cp.BuildingParams()
        np.testing.assert_allclose(bld.heat_coefficient(3), 29.0)

    def test_rates_and_disturbance(self):
        bld = cp.BuildingParams()
        np.testing.assert_allclose(bld.rates(2), 0.6)
        np.testing.assert_allclose(bld.disturbance(2, -25.0), -27.0)

    def test_positivity_validation(self):
        with pytest.raises(ValueError):
            cp.BuildingParams(c=0.0)


class TestScenario:
    def test_consumer_count(self):
        net, bld, agents = cp.build_dhn_scenario()
        assert net.n_consumers == 22
        assert agents.n == 22
        np.testing.assert_allclose(agents.a, 0.6)
        np.testing.assert_allclose(agents.w, -27.0)

    def test_network_file_round_trip(self, tmp_path):
        net = cp.build_dhn_network()
        data = cp.network_to_dict(net)
        path = tmp_path / "net.cfg"
        path.write_text(json.dumps(data), encoding="utf-8")
        net2 = cp.network_from_dict(json.loads(path.read_text(encoding="utf-8")))
        v = np.full(22, 0.25)
        np.testing.assert_array_equal(cp.solve_flows(net, v), cp.solve_flows(net2, v))

    def test_network_file_unknown_key(self):
        data = cp.network_to_dict(cp.build_dhn_network())
        data["pipes"] = []
        with pytest.raises(cp.ConfigError):
            cp.network_from_dict(data)

    def test_interconnection_values_and_stats(self):
        net, bld, _ = cp.build_dhn_scenario()
        stats = cp.HydraulicStats()
        ic = cp.dhn_interconnection(net, bld, stats)
        v = np.zeros(22)
        np.testing.assert_allclose(ic(v), 29.0 * cp.solve_flows(net, v), rtol=1e-9)
        assert stats.n_solves >= 1
        assert stats.max_mass_residual < 1e-8

    def test_dhn_satisfies_structural_assumption(self, dhn_small):
        _, _, ic = dhn_small
        assert cp.check_assumption1(ic, 300, rng_seed=0).passed

    def test_zero_flow_limit(self):
        # all valves shut against a tiny pump pressure: heat rate nearly zero
        net = cp.build_dhn_network(1e-9)
        bld = cp.BuildingParams()
        ic = cp.dhn_interconnection(net, bld)
        b = ic(np.full(22, -1.0))
        assert np.all(b > 0) and np.all(b < 1e-3)


class TestAllocatorsOnSmallNetwork:
    @pytest.mark.parametrize("T_o", [-26.5, -15.0, -5.0])
    def test_l1_matches_grid_oracle(self, dhn_small, T_o):
        net, bld, ic = dhn_small
        agents = cp.AgentEnsemble(a=bld.rates(2), w=bld.disturbance(2, T_o))
        fast = cp.solve_l1_allocation(ic, agents)
        slow = cp.oracle_weighted_l1(ic, agents, cp.OracleOptions(grid_points=41))
        assert fast.cost <= slow.cost + 1e-6 * (1 + slow.cost)

    @pytest.mark.parametrize("T_o", [-26.5, -15.0, -5.0])
    def test_linf_matches_grid_oracle(self, dhn_small, T_o):
        net, bld, ic = dhn_small
        agents = cp.AgentEnsemble(a=bld.rates(2), w=bld.disturbance(2, T_o))
        fast = cp.solve_linf_allocation(ic, agents)
        slow = cp.oracle_linf(ic, agents, cp.OracleOptions(grid_points=41))
        assert fast.cost <= slow.cost + 1e-6 * (1 + slow.cost)

    def test_deep_deficit_equalizes(self, dhn_small):
        net, bld, ic = dhn_small
        agents = cp.AgentEnsemble(a=bld.rates(2), w=bld.disturbance(2, -26.5))
        res = cp.solve_linf_allocation(ic, agents)
        assert res.x.max() - res.x.min() < 1e-6
        assert np.any(res.v >= 1.0 - 1e-9)
