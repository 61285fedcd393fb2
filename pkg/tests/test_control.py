import numpy as np
import pytest

import capnet as cp
from capnet.control import CoordinatingMonitor, DecentralizedMonitor, control_input
from capnet.errors import TuningError


class TestFields:
    def test_scalar_equilibrium_state(self, scalar_system):
        # u = 3.5 saturates at 1; the anti-windup exactly cancels the error
        s = cp.ClosedLoopState([-1.0], [-1.5])
        u = control_input(scalar_system.gains, s)
        assert u[0] == pytest.approx(3.5)
        dx, dz = cp.field_decentralized(scalar_system, s)
        assert dx[0] == pytest.approx(0.0, abs=1e-12)
        assert dz[0] == pytest.approx(0.0, abs=1e-12)

    def test_origin_equilibrium_unforced(self, ic2, gains_dec2, bounds2):
        agents = cp.AgentEnsemble(a=[1.0, 1.0], w=[0.0, 0.0])
        sys0 = cp.ClosedLoopSystem(agents=agents, ic=ic2, gains=gains_dec2, bounds=bounds2)
        dx, dz = cp.field_decentralized(sys0, cp.ClosedLoopState.zero(2))
        np.testing.assert_allclose(dx, 0.0)
        np.testing.assert_allclose(dz, 0.0)

    def test_two_agent_equilibrium_state(self, sys_dec2):
        x0 = np.array([-1.25, -0.25])
        u0 = np.array([4.125, 1.625])
        z0 = -(u0 + sys_dec2.gains.kP * x0) / sys_dec2.gains.kI
        dx, dz = cp.field_decentralized(sys_dec2, cp.ClosedLoopState(x0, z0))
        np.testing.assert_allclose(dx, 0.0, atol=1e-12)
        np.testing.assert_allclose(dz, 0.0, atol=1e-12)

    def test_coordinating_equilibrium_state(self, sys_coord2):
        x0 = np.array([-1.05, -1.05])
        u0 = np.array([3.1, 0.2])
        z0 = -(u0 + sys_coord2.gains.kP * x0) / sys_coord2.gains.kI
        s = cp.ClosedLoopState(x0, z0)
        u = control_input(sys_coord2.gains, s)
        np.testing.assert_allclose(u, u0, atol=1e-12)
        dx, dz = cp.field_coordinating(sys_coord2, s)
        np.testing.assert_allclose(dx, 0.0, atol=1e-12)
        np.testing.assert_allclose(dz, 0.0, atol=1e-12)

    def test_unsaturated_fields_agree(self, agents2, ic2, bounds2):
        gd = cp.ControllerGains(kP=[1.0, 1.0], kI=[0.5, 0.5], mode="decentralized",
                                kA=[0.1, 0.1])
        gc = cp.ControllerGains(kP=[1.0, 1.0], kI=[0.5, 0.5], mode="coordinating",
                                kC=0.5, alpha=1.0)
        sd = cp.ClosedLoopSystem(agents=agents2, ic=ic2, gains=gd, bounds=bounds2)
        sc = cp.ClosedLoopSystem(agents=agents2, ic=ic2, gains=gc, bounds=bounds2)
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.uniform(-0.4, 0.4, 2)
            z = rng.uniform(-0.4, 0.4, 2)
            s = cp.ClosedLoopState(x, z)
            if np.any(cp.deadzone(control_input(gd, s), bounds2) != 0.0):
                continue
            dxd, dzd = cp.field_decentralized(sd, s)
            dxc, dzc = cp.field_coordinating(sc, s)
            np.testing.assert_array_equal(dxd, dxc)
            np.testing.assert_array_equal(dzd, dzc)

    def test_mode_guards(self, sys_dec2, sys_coord2):
        s = cp.ClosedLoopState.zero(2)
        with pytest.raises(ValueError):
            cp.field_coordinating(sys_dec2, s)
        with pytest.raises(ValueError):
            cp.field_decentralized(sys_coord2, s)


class TestCoordinates:
    def test_round_trip(self, gains_dec2):
        rng = np.random.default_rng(1)
        for _ in range(100):
            s = cp.ClosedLoopState(rng.normal(size=2), rng.normal(size=2))
            zeta, u = cp.to_zeta_u(s, gains_dec2)
            back = cp.from_zeta_u(zeta, u, gains_dec2)
            np.testing.assert_allclose(back.x, s.x, atol=1e-12)
            np.testing.assert_allclose(back.z, s.z, atol=1e-12)

    def test_zero_error_means_zeta_equals_u(self, gains_dec2):
        s = cp.ClosedLoopState(np.zeros(2), np.array([0.7, -0.3]))
        zeta, u = cp.to_zeta_u(s, gains_dec2)
        np.testing.assert_array_equal(zeta, u)

    def test_scalar_values(self):
        gains = cp.ControllerGains(kP=[2.0], kI=[1.0], mode="decentralized", kA=[0.4])
        zeta, u = cp.to_zeta_u(cp.ClosedLoopState([-1.0], [-1.5]), gains)
        assert u[0] == pytest.approx(3.5)
        assert zeta[0] == pytest.approx(1.5)


class TestCertificates:
    def test_decentralized_zero_at_equilibrium(self, sys_dec2):
        assert cp.lyapunov_decentralized(sys_dec2, np.zeros(2), np.zeros(2)) == 0.0

    def test_decentralized_scalar_value(self, scalar_system):
        # a=1, kP=2, kI=1, eta=1: c=0.5, d=0.5, coefficient d/(kP*c) = 0.5
        val = cp.lyapunov_decentralized(scalar_system, np.array([1.0]), np.array([0.0]))
        assert val == pytest.approx(0.5)

    def test_decentralized_needs_margin(self, ic2, bounds2):
        agents = cp.AgentEnsemble(a=[0.4, 0.4], w=[0.0, 0.0])
        gains = cp.ControllerGains(kP=[2.0, 2.0], kI=[1.0, 1.0],
                                   mode="decentralized", kA=[0.4, 0.4])
        sys_bad = cp.ClosedLoopSystem(agents=agents, ic=ic2, gains=gains, bounds=bounds2)
        with pytest.raises(TuningError):
            cp.lyapunov_decentralized(sys_bad, np.ones(2), np.ones(2))

    def test_coordinating_zero_inside_bounds(self, sys_coord2):
        assert cp.lyapunov_coordinating(sys_coord2, np.array([0.5, -0.5]),
                                        np.array([0.9, 0.0])) == 0.0

    def test_coordinating_scalar_value(self, ic2, bounds2):
        bounds = cp.SaturationBounds.symmetric(1.0, 1)
        ic = cp.LinearMMatrix([[1.0]]).as_interconnection(bounds)
        agents = cp.AgentEnsemble(a=[1.0], w=[0.0])
        gains = cp.ControllerGains(kP=[1.0], kI=[0.5], mode="coordinating",
                                   kC=0.5, alpha=1.0)
        sysc = cp.ClosedLoopSystem(agents=agents, ic=ic, gains=gains, bounds=bounds)
        val = cp.lyapunov_coordinating(sysc, np.array([0.0]), np.array([3.1]))
        assert val == pytest.approx(4.41)

    def test_rejectable_disturbance(self, ic2, gains_coord2, bounds2):
        ok = cp.AgentEnsemble(a=[1.0, 1.0], w=[-0.3, 0.2])
        no = cp.AgentEnsemble(a=[1.0, 1.0], w=[-2.0, -1.0])
        s_ok = cp.ClosedLoopSystem(agents=ok, ic=ic2, gains=gains_coord2, bounds=bounds2)
        s_no = cp.ClosedLoopSystem(agents=no, ic=ic2, gains=gains_coord2, bounds=bounds2)
        assert cp.rejectable_disturbance(s_ok)
        assert not cp.rejectable_disturbance(s_no)


class TestMonitors:
    def test_flags_artificial_increase(self, sys_dec2):
        monitor = DecentralizedMonitor(sys_dec2, np.zeros(2), np.zeros(2))
        far = cp.ClosedLoopState(np.array([2.0, 2.0]), np.array([1.0, 1.0]))
        near = cp.ClosedLoopState(np.array([0.1, 0.1]), np.array([0.05, 0.05]))
        monitor.observe(0.0, near)
        monitor.observe(1.0, far)  # V jumped up: must be flagged
        assert not monitor.ok
        assert monitor.max_excess > 0

    def test_accepts_decrease(self, sys_dec2):
        monitor = DecentralizedMonitor(sys_dec2, np.zeros(2), np.zeros(2))
        for k in range(5):
            scalefac = 2.0 ** -k
            monitor.observe(float(k), cp.ClosedLoopState(
                scalefac * np.ones(2), scalefac * np.ones(2)))
        assert monitor.ok

    def test_coordinating_monitor_scope(self, sys_coord2):
        monitor = CoordinatingMonitor(sys_coord2)
        inside = cp.ClosedLoopState(np.zeros(2), np.zeros(2))
        assert not monitor.in_scope(inside)  # unsaturated: decrease not claimed
        saturated = cp.ClosedLoopState(np.array([-3.0, -3.0]), np.zeros(2))
        assert monitor.in_scope(saturated)
