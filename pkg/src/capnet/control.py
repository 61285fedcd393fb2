"""Closed-loop vector fields for the two anti-windup PI controllers.

Both controllers share the PI law u = -kP*x - kI*z.  They differ in how the
integrator reacts to saturation: the decentralized law feeds each agent's own
saturation excess back into its integrator, while the coordinating law feeds
the same shared sum of all excesses into every integrator.

The module also provides the (zeta, u) coordinates in which the stability
certificates are expressed, both certificate functions, and trajectory
monitors that flag any step on which a certificate increased beyond slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (COORDINATING, DECENTRALIZED, AgentEnsemble, ControllerGains,
                   SaturationBounds, as_vector, deadzone, saturate)
from .errors import DimensionError, TuningError
from .interconnect import Interconnection

#: multiplicative slack for the certificate-decrease monitors; discrete
#: integration may produce increases of this order without meaning anything
MONITOR_SLACK = 1e-7


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    """Plant + interconnection + controller, dimension-checked once."""

    agents: AgentEnsemble
    ic: Interconnection
    gains: ControllerGains
    bounds: SaturationBounds

    def __post_init__(self):
        n = self.agents.n
        if self.gains.n != n or self.ic.n != n or self.bounds.n != n:
            raise DimensionError("agents, gains, interconnection and bounds disagree in size")
        if not (np.array_equal(self.bounds.lower, self.ic.bounds.lower)
                and np.array_equal(self.bounds.upper, self.ic.bounds.upper)):
            raise ValueError("system bounds must equal the interconnection domain")

    @property
    def n(self) -> int:
        return self.agents.n

    # positive diagonal factors used by the certificates:
    # scaled integral gain c = kI/kP and the margin d = a - c
    @property
    def c_ratio(self) -> np.ndarray:
        return self.gains.kI / self.gains.kP

    @property
    def d_margin(self) -> np.ndarray:
        return self.agents.a - self.c_ratio


@dataclass
class ClosedLoopState:
    """Tracking errors x and integral states z."""

    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.x.shape != self.z.shape or self.x.ndim != 1:
            raise DimensionError("x and z must be 1-D arrays of equal length")

    @classmethod
    def zero(cls, n: int) -> "ClosedLoopState":
        return cls(np.zeros(n), np.zeros(n))

    def copy(self) -> "ClosedLoopState":
        return ClosedLoopState(self.x.copy(), self.z.copy())


def control_input(gains: ControllerGains, s: ClosedLoopState) -> np.ndarray:
    """PI law u = -kP*x - kI*z."""
    return -gains.kP * s.x - gains.kI * s.z


def field_decentralized(sys: ClosedLoopSystem, s: ClosedLoopState, t: float = 0.0):
    """Time derivatives (dx, dz) of the decentralized loop at time t."""
    if sys.gains.mode != DECENTRALIZED:
        raise ValueError("system gains are not decentralized")
    u = control_input(sys.gains, s)
    v = saturate(u, sys.bounds)
    dx = -sys.agents.a * s.x + sys.ic(v) + sys.agents.w_at(t)
    dz = s.x + sys.gains.kA * (u - v)
    return dx, dz


def field_coordinating(sys: ClosedLoopSystem, s: ClosedLoopState, t: float = 0.0):
    """Time derivatives (dx, dz) of the coordinating loop at time t.

    Every integrator receives the same shared term kC * sum_j dz(u)_j.
    """
    if sys.gains.mode != COORDINATING:
        raise ValueError("system gains are not coordinating")
    u = control_input(sys.gains, s)
    v = saturate(u, sys.bounds)
    dx = -sys.agents.a * s.x + sys.ic(v) + sys.agents.w_at(t)
    dz = s.x + sys.gains.kC * np.sum(u - v)
    return dx, dz


def field(sys: ClosedLoopSystem, s: ClosedLoopState, t: float = 0.0):
    """Dispatch on the controller mode."""
    if sys.gains.mode == DECENTRALIZED:
        return field_decentralized(sys, s, t)
    return field_coordinating(sys, s, t)


# ---------------------------------------------------------------------------
# coordinates


def to_zeta_u(s: ClosedLoopState, gains: ControllerGains):
    """Map (x, z) to (zeta, u) with zeta = -kI*z and u = -kP*x - kI*z."""
    zeta = -gains.kI * s.z
    u = -gains.kP * s.x + zeta
    return zeta, u


def from_zeta_u(zeta, u, gains: ControllerGains) -> ClosedLoopState:
    """Exact inverse of :func:`to_zeta_u`."""
    zeta = np.asarray(zeta, dtype=float)
    u = np.asarray(u, dtype=float)
    x = (zeta - u) / gains.kP
    z = -zeta / gains.kI
    return ClosedLoopState(x, z)


# ---------------------------------------------------------------------------
# certificates


def lyapunov_decentralized(sys: ClosedLoopSystem, zeta_shift, u_shift) -> float:
    """Weighted 1-norm certificate of the decentralized loop.

    Arguments are the deviations (zeta - zeta0, u - u0) from an equilibrium.
    V = sum_i eta_i*d_i/(kP_i*c_i) |zeta~_i| + eta_i/kP_i |u~_i|, which
    requires the tuning margin d_i = a_i - kI_i/kP_i to be positive.
    """
    d = sys.d_margin
    if np.any(d <= 0):
        raise TuningError("certificate needs kP_i*a_i > kI_i for every agent")
    zeta_shift = np.asarray(zeta_shift, dtype=float)
    u_shift = np.asarray(u_shift, dtype=float)
    eta, kP, c = sys.ic.eta, sys.gains.kP, sys.c_ratio
    return float(np.sum(eta * d / (kP * c) * np.abs(zeta_shift))
                 + np.sum(eta / kP * np.abs(u_shift)))


def lyapunov_coordinating(sys: ClosedLoopSystem, zeta, u) -> float:
    """Quadratic dead-zone certificate of the coordinating loop.

    V = 1/2 dz(zeta)' D R^-1 C^-1 dz(zeta) + 1/2 dz(u)' R^-1 dz(u), with the
    dead-zones taken against the actuator bounds.  Zero exactly when both
    zeta and u are inside the bounds.
    """
    if sys.gains.mode != COORDINATING:
        raise ValueError("system gains are not coordinating")
    d = sys.d_margin
    if np.any(d <= 0):
        raise TuningError("certificate needs a_i > kI_i/kP_i for every agent")
    dz_zeta = deadzone(np.asarray(zeta, dtype=float), sys.bounds)
    dz_u = deadzone(np.asarray(u, dtype=float), sys.bounds)
    kI, c = sys.gains.kI, sys.c_ratio
    return float(0.5 * np.sum(d / (kI * c) * dz_zeta ** 2)
                 + 0.5 * np.sum(dz_u ** 2 / kI))


# ---------------------------------------------------------------------------
# monitors


@dataclass
class MonitorRecord:
    t: float
    value: float
    increase: float


class LyapunovMonitor:
    """Tracks a certificate along accepted integrator steps.

    A step is flagged when V increased by more than slack*(1 + V_prev).
    Subclasses define the certificate and when a step is in scope.
    """

    name = "lyapunov"

    def __init__(self, sys: ClosedLoopSystem, slack: float = MONITOR_SLACK):
        self.sys = sys
        self.slack = slack
        self.values: list = []
        self.violations: list = []
        self._prev: Optional[MonitorRecord] = None
        self.in_scope_pair = True

    def value(self, s: ClosedLoopState) -> float:
        raise NotImplementedError

    def in_scope(self, s: ClosedLoopState) -> bool:
        return True

    def observe(self, t: float, s: ClosedLoopState) -> float:
        v = self.value(s)
        increase = 0.0
        if self._prev is not None and self.in_scope_pair:
            increase = v - self._prev.value
            if increase > self.slack * (1.0 + self._prev.value):
                self.violations.append(MonitorRecord(t, v, increase))
        self.in_scope_pair = self.in_scope(s)
        rec = MonitorRecord(t, v, increase)
        self.values.append(rec)
        self._prev = rec
        return v

    def reset(self):
        self.values = []
        self.violations = []
        self._prev = None
        self.in_scope_pair = True

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_excess(self) -> float:
        if not self.violations:
            return 0.0
        return max(r.increase for r in self.violations)


class DecentralizedMonitor(LyapunovMonitor):
    """Decrease monitor for the decentralized certificate, anchored at a
    computed equilibrium (zeta0, u0)."""

    name = "decentralized-lyapunov"

    def __init__(self, sys, zeta0, u0, slack: float = MONITOR_SLACK):
        super().__init__(sys, slack)
        self.zeta0 = as_vector(zeta0, "zeta0")
        self.u0 = as_vector(u0, "u0")

    def value(self, s: ClosedLoopState) -> float:
        zeta, u = to_zeta_u(s, self.sys.gains)
        return lyapunov_decentralized(self.sys, zeta - self.zeta0, u - self.u0)


class CoordinatingMonitor(LyapunovMonitor):
    """Decrease monitor for the coordinating dead-zone certificate.

    Decrease is only guaranteed while the control is saturated, so steps
    starting from dz(u) = 0 are out of scope.
    """

    name = "coordinating-lyapunov"

    def value(self, s: ClosedLoopState) -> float:
        zeta, u = to_zeta_u(s, self.sys.gains)
        return lyapunov_coordinating(self.sys, zeta, u)

    def in_scope(self, s: ClosedLoopState) -> bool:
        u = control_input(self.sys.gains, s)
        return bool(np.any(deadzone(u, self.sys.bounds) != 0.0))


def rejectable_disturbance(sys: ClosedLoopSystem, t: float = 0.0) -> bool:
    """True when b(upper)+w > 0 > b(lower)+w, i.e. exact rejection of w is
    feasible strictly inside the actuator box."""
    w = sys.agents.w_at(t)
    hi = sys.ic(sys.bounds.upper) + w
    lo = sys.ic(sys.bounds.lower) + w
    return bool(np.all(hi > 0) and np.all(lo < 0))
