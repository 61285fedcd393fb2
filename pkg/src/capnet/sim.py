"""Time integration, disturbance profiles and scenario execution.

The default integrator is an embedded Dormand-Prince Runge-Kutta 5(4) pair
with proportional step control and cubic-Hermite dense output; a fixed-step
implicit Euler with an inner Newton solve is available for stiff setups.
Both are self-contained so runs are reproducible bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .control import (ClosedLoopState, ClosedLoopSystem, CoordinatingMonitor,
                      DecentralizedMonitor, LyapunovMonitor, control_input, field as loop_field,
                      rejectable_disturbance)
from .core import DECENTRALIZED, AgentEnsemble
from .errors import ConfigError, IntegrationError, TuningError
from .hydraulics import HydraulicStats
from .interconnect import Interconnection

log = logging.getLogger(__name__)

POLICIES = ("decentralized", "coordinating", "oracle-l1", "oracle-linf")


# ---------------------------------------------------------------------------
# disturbance profiles


@dataclass(frozen=True, eq=False)
class DisturbanceProfile:
    """Constant or piecewise-linear disturbance.

    ``values`` is a constant vector, a shared scalar series (k,), or a
    per-agent series (k, n).  An affine map w = scale*(value - offset) turns
    a raw series such as an outdoor temperature into the disturbance each
    agent sees (scale=a, offset=T_ref).
    """

    kind: str
    values: np.ndarray
    times: Optional[np.ndarray] = None
    scale: np.ndarray | float = 1.0
    offset: np.ndarray | float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.kind == "constant":
            if self.times is not None:
                raise ValueError("constant profile takes no breakpoint times")
        elif self.kind == "piecewise-linear":
            t = np.asarray(self.times, dtype=float)
            if t.ndim != 1 or len(t) < 2:
                raise ValueError("piecewise profile needs at least two breakpoints")
            if not np.all(np.diff(t) > 0):
                raise ValueError("breakpoint times must be strictly increasing")
            if self.values.shape[0] != len(t):
                raise ValueError("values and times disagree in length")
            object.__setattr__(self, "times", t)
        else:
            raise ValueError(f"unknown profile kind {self.kind!r}")

    @classmethod
    def constant(cls, w) -> "DisturbanceProfile":
        return cls(kind="constant", values=np.atleast_1d(np.asarray(w, dtype=float)))

    @classmethod
    def piecewise(cls, times, values) -> "DisturbanceProfile":
        return cls(kind="piecewise-linear", values=values, times=times)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def raw(self, t: float):
        """Interpolated raw value(s) before the affine map."""
        if self.is_constant:
            return self.values
        if self.values.ndim == 1:
            return float(np.interp(t, self.times, self.values))
        return np.array([np.interp(t, self.times, col) for col in self.values.T])

    def eval(self, t: float) -> np.ndarray:
        """Disturbance vector at time t."""
        return np.atleast_1d(np.asarray(self.scale * (self.raw(t) - self.offset), dtype=float))

    def with_thermal_map(self, a, T_ref) -> "DisturbanceProfile":
        """Map a raw temperature series into w(t) = a * (T(t) - T_ref)."""
        return DisturbanceProfile(kind=self.kind, values=self.values, times=self.times,
                                  scale=np.asarray(a, dtype=float),
                                  offset=np.asarray(T_ref, dtype=float))


#: synthetic 96-hour outdoor temperature [degC]: mild start, daily swings,
#: a deep pit below -25 degC around hour 51, recovery toward -10 degC
TEMPERATURE_TIMES = np.array([0, 6, 12, 18, 24, 30, 33, 36, 42, 45, 47, 49,
                              51, 53, 55, 58, 62, 68, 74, 80, 86, 92, 96], dtype=float)
TEMPERATURE_VALUES = np.array([-5, -9, -6, -10, -13, -18, -16, -14, -19, -24, -26, -26.4,
                               -26.5, -26.4, -25.5, -23, -19, -15, -13, -14.5, -12, -11, -10])


def make_temperature_profile() -> DisturbanceProfile:
    """The shipped piecewise-linear outdoor temperature T_o(t)."""
    return DisturbanceProfile.piecewise(TEMPERATURE_TIMES, TEMPERATURE_VALUES)


# ---------------------------------------------------------------------------
# integrators


@dataclass
class SolverOptions:
    """Integration settings; defaults suit the desk-scale systems here."""

    method: str = "rk45"            # "rk45" | "implicit_euler"
    atol: float = 1e-8
    rtol: float = 1e-6
    output_dt: Optional[float] = None   # None: record accepted steps
    dt_init: Optional[float] = None
    dt_max: Optional[float] = None      # None: span/64
    dt_fixed: Optional[float] = None    # implicit Euler step; None: span/400
    max_steps: int = 2_000_000

    def __post_init__(self):
        if self.method not in ("rk45", "implicit_euler"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("tolerances must be positive")
        for name in ("output_dt", "dt_init", "dt_max", "dt_fixed"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive when given")


@dataclass
class IntegrationStats:
    accepted: int = 0
    rejected: int = 0
    n_field_evals: int = 0


@dataclass
class Trajectory:
    """Sampled closed-loop run: states, inputs, resource shares, certificate."""

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    b: np.ndarray
    lyapunov: Optional[np.ndarray]
    stats: IntegrationStats
    monitor: Optional[LyapunovMonitor] = None

    @property
    def n_points(self) -> int:
        return len(self.times)

    def state(self, k: int) -> ClosedLoopState:
        return ClosedLoopState(self.x[k].copy(), self.z[k].copy())

    def terminal_state(self) -> ClosedLoopState:
        return self.state(-1)


# Dormand-Prince 5(4) tableau; fifth-order solution is propagated, the
# embedded fourth-order difference drives step control (FSAL pair).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


def _hermite(t, t0, y0, f0, t1, y1, f1):
    """Cubic Hermite interpolant on one accepted step."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


class _StepRecorder:
    """Samples a dense output grid from accepted steps as they arrive."""

    def __init__(self, t0, t1, output_dt):
        if output_dt is None:
            self.grid = None
        else:
            m = int(np.floor((t1 - t0) / output_dt + 1e-9))
            grid = t0 + output_dt * np.arange(m + 1)
            if grid[-1] < t1 - 1e-9 * max(1.0, abs(t1)):
                grid = np.append(grid, t1)
            else:
                grid[-1] = t1
            self.grid = grid
        self.next_idx = 0
        self.ts: list = []
        self.ys: list = []

    def start(self, t0, y0):
        if self.grid is None:
            self.ts.append(t0)
            self.ys.append(y0.copy())
        else:
            # grid[0] == t0 always
            self.ts.append(self.grid[0])
            self.ys.append(y0.copy())
            self.next_idx = 1

    def accepted(self, t0, y0, f0, t1, y1, f1):
        if self.grid is None:
            self.ts.append(t1)
            self.ys.append(y1.copy())
            return
        while self.next_idx < len(self.grid) and self.grid[self.next_idx] <= t1 + 1e-12:
            tg = self.grid[self.next_idx]
            if tg >= t1 - 1e-12:
                self.ts.append(t1)
                self.ys.append(y1.copy())
            else:
                self.ts.append(tg)
                self.ys.append(_hermite(tg, t0, y0, f0, t1, y1, f1))
            self.next_idx += 1


def _integrate_rk45(fun, t0, t1, y0, opts, on_accept, recorder):
    span = t1 - t0
    dt_max = opts.dt_max if opts.dt_max is not None else span / 64.0
    dt = opts.dt_init if opts.dt_init is not None else min(dt_max, span / 100.0)
    stats = IntegrationStats()
    t, y = t0, y0.copy()
    f = fun(t, y)
    stats.n_field_evals += 1
    recorder.start(t, y)
    k = np.empty((7, len(y0)))
    while t < t1 - 1e-12 * max(1.0, abs(t1)):
        dt = min(dt, t1 - t, dt_max)
        if dt < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError("step size underflow", t=t, state=y.copy())
        if stats.accepted + stats.rejected > opts.max_steps:
            raise IntegrationError("step budget exhausted", t=t, state=y.copy())
        k[0] = f
        for i in range(1, 7):
            yi = y + dt * (_DP_A[i] @ k[:i])
            k[i] = fun(t + _DP_C[i] * dt, yi)
        stats.n_field_evals += 6
        y_new = y + dt * (_DP_B5 @ k)
        err_vec = dt * ((_DP_B5 - _DP_B4) @ k)
        scale = opts.atol + opts.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0:
            t_new = t + dt
            f_new = k[6]  # FSAL: last stage is f(t_new, y_new)
            recorder.accepted(t, y, f, t_new, y_new, f_new)
            if on_accept is not None:
                on_accept(t_new, y_new)
            t, y, f = t_new, y_new, f_new
            stats.accepted += 1
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            stats.rejected += 1
            factor = max(0.2, 0.9 * err ** -0.2)
        dt *= factor
    return stats


def _integrate_implicit_euler(fun, t0, t1, y0, opts, on_accept, recorder):
    span = t1 - t0
    dt = opts.dt_fixed if opts.dt_fixed is not None else span / 400.0
    n = len(y0)
    stats = IntegrationStats()
    t, y = t0, y0.copy()
    f = fun(t, y)
    stats.n_field_evals += 1
    recorder.start(t, y)
    n_steps = int(np.ceil(span / dt - 1e-9))
    for step in range(n_steps):
        t_new = min(t1, t0 + (step + 1) * dt)
        h = t_new - t
        y_new = y + h * f  # explicit predictor
        # chord Newton: J of the field refreshed once per step
        J = np.empty((n, n))
        f_base = fun(t_new, y_new)
        stats.n_field_evals += 1
        for j in range(n):
            eps = 1e-7 * max(1.0, abs(y_new[j]))
            yp = y_new.copy()
            yp[j] += eps
            J[:, j] = (fun(t_new, yp) - f_base) / eps
        stats.n_field_evals += n
        A = np.eye(n) - h * J
        converged = False
        g = y_new - y - h * f_base
        for _ in range(25):
            try:
                delta = np.linalg.solve(A, g)
            except np.linalg.LinAlgError as exc:
                raise IntegrationError(f"implicit step matrix singular: {exc}",
                                       t=t_new, state=y_new.copy()) from exc
            y_new = y_new - delta
            f_base = fun(t_new, y_new)
            stats.n_field_evals += 1
            g = y_new - y - h * f_base
            tol = opts.atol + opts.rtol * float(np.max(np.abs(y_new)))
            if float(np.max(np.abs(g))) <= 0.1 * tol:
                converged = True
                break
        if not converged:
            raise IntegrationError("implicit Euler inner Newton did not converge",
                                   t=t_new, state=y_new.copy())
        f_new = f_base
        recorder.accepted(t, y, f, t_new, y_new, f_new)
        if on_accept is not None:
            on_accept(t_new, y_new)
        t, y, f = t_new, y_new, f_new
        stats.accepted += 1
    return stats


def integrate(
    sys: ClosedLoopSystem,
    s0: ClosedLoopState,
    t_span,
    opts: Optional[SolverOptions] = None,
    monitor: Optional[LyapunovMonitor] = None,
) -> Trajectory:
    """Integrate the closed loop over t_span and sample the output grid.

    The monitor, when given, observes every accepted step.  It is refused and
    disabled with a notice when the disturbance varies in time, since the
    decrease certificates assume a constant disturbance.
    """
    opts = opts or SolverOptions()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must satisfy t1 > t0")
    n = sys.n
    if monitor is not None and not sys.agents.w_is_constant:
        log.info("disturbance varies in time: Lyapunov monitor disabled")
        monitor = None

    def fun(t, y):
        s = ClosedLoopState(y[:n], y[n:])
        dx, dz = loop_field(sys, s, t)
        return np.concatenate([dx, dz])

    def on_accept(t, y):
        if monitor is not None:
            monitor.observe(t, ClosedLoopState(y[:n], y[n:]))

    if monitor is not None:
        monitor.observe(t0, s0)

    y0 = np.concatenate([s0.x, s0.z])
    recorder = _StepRecorder(t0, t1, opts.output_dt)
    if opts.method == "rk45":
        stats = _integrate_rk45(fun, t0, t1, y0, opts, on_accept, recorder)
    else:
        stats = _integrate_implicit_euler(fun, t0, t1, y0, opts, on_accept, recorder)

    times = np.array(recorder.ts)
    ys = np.array(recorder.ys)
    xs, zs = ys[:, :n], ys[:, n:]
    us = -sys.gains.kP * xs - sys.gains.kI * zs
    vs = np.clip(us, sys.bounds.lower, sys.bounds.upper)
    bs = np.array([sys.ic(v) for v in vs])
    lyap = None
    if monitor is not None:
        lyap = np.array([monitor.value(ClosedLoopState(xs[k], zs[k]))
                         for k in range(len(times))])
    return Trajectory(times=times, x=xs, z=zs, u=us, v=vs, b=bs,
                      lyapunov=lyap, stats=stats, monitor=monitor)


# ---------------------------------------------------------------------------
# scenario execution


@dataclass
class Scenario:
    """Everything run_scenario needs, already built into objects."""

    policy: str
    agents: AgentEnsemble
    ic: Interconnection
    t_span: tuple
    opts: SolverOptions
    system: Optional[ClosedLoopSystem] = None       # PI policies
    initial: Optional[ClosedLoopState] = None
    force: bool = False
    monitor_enabled: bool = True
    temperature: Optional[DisturbanceProfile] = None  # raw T_o(t), for summaries
    hydraulic_stats: Optional[HydraulicStats] = None
    out_dir: Optional[Path] = None
    prefix: str = "run"


@dataclass
class RunArtifacts:
    policy: str
    trajectory: Optional[Trajectory]
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    summary: dict
    csv_path: Optional[Path] = None
    summary_path: Optional[Path] = None


def _format_float(val: float) -> str:
    return f"{val:.17g}"


def write_trajectory_csv(path: Path, times, x, u, v, lyapunov=None):
    """CSV contract: header t,x1..xn,u1..un,v1..vn,V with 17 significant
    digits, UTF-8 and LF line endings; V is empty when no monitor ran."""
    n = x.shape[1]
    cols = (["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(n)]
            + [f"v{i+1}" for i in range(n)] + ["V"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(times)):
            row = [_format_float(times[k])]
            row += [_format_float(val) for val in x[k]]
            row += [_format_float(val) for val in u[k]]
            row += [_format_float(val) for val in v[k]]
            row.append("" if lyapunov is None else _format_float(lyapunov[k]))
            fh.write(",".join(row) + "\n")


def write_summary(path: Path, summary: dict):
    """Key/value lines, sorted, then a short human-readable block."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(summary):
            fh.write(f"{key}={summary[key]}\n")


def _setup_monitor(sc: Scenario):
    sys = sc.system
    if not sc.monitor_enabled or sys is None or not sys.agents.w_is_constant:
        if sc.monitor_enabled and sys is not None and not sys.agents.w_is_constant:
            log.info("time-varying disturbance: certificate monitor disabled")
        return None
    if np.any(sys.d_margin <= 0):
        log.info("tuning margin a - kI/kP not positive: certificate monitor disabled")
        return None
    from . import equilibria  # deferred: equilibria imports this module

    if sys.gains.mode == DECENTRALIZED:
        try:
            rep = equilibria.find_equilibrium_decentralized(sys)
        except Exception as exc:  # no equilibrium -> no anchor for the shifted V
            log.info("equilibrium solve failed (%s): monitor disabled", exc)
            return None
        return DecentralizedMonitor(sys, rep.zeta0, rep.u0)
    if rejectable_disturbance(sys):
        return CoordinatingMonitor(sys)
    log.info("disturbance not rejectable: coordinating certificate monitor disabled")
    return None


def _deviation_stats(times, x, temperature):
    """Max/sum absolute deviation over time plus the coldest-sample cut."""
    max_dev = np.max(np.abs(x), axis=1)
    sum_dev = np.sum(np.abs(x), axis=1)
    out = {
        "max_deviation_overall": float(np.max(max_dev)),
        "time_of_max_deviation": float(times[int(np.argmax(max_dev))]),
    }
    if temperature is not None:
        temps = np.array([temperature.raw(t) for t in times], dtype=float)
        k = int(np.argmin(temps))
        out.update({
            "coldest_time": float(times[k]),
            "coldest_temperature": float(temps[k]),
            "max_deviation_at_coldest": float(max_dev[k]),
            "sum_deviation_at_coldest": float(sum_dev[k]),
        })
    return out


def run_scenario(sc: Scenario) -> RunArtifacts:
    """Execute one policy and write its trajectory CSV and summary record."""
    if sc.policy not in POLICIES:
        raise ConfigError(f"unknown policy {sc.policy!r}")
    if sc.policy in ("decentralized", "coordinating"):
        arts = _run_closed_loop(sc)
    else:
        arts = _run_oracle_policy(sc)
    if sc.out_dir is not None:
        out = Path(sc.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{sc.prefix}_{sc.policy}.csv"
        lyap = arts.trajectory.lyapunov if arts.trajectory is not None else None
        u = arts.trajectory.u if arts.trajectory is not None else arts.v
        write_trajectory_csv(csv_path, arts.times, arts.x, u, arts.v, lyap)
        summary_path = out / f"{sc.prefix}_{sc.policy}_summary.txt"
        write_summary(summary_path, arts.summary)
        arts.csv_path = csv_path
        arts.summary_path = summary_path
    return arts


def _run_closed_loop(sc: Scenario) -> RunArtifacts:
    from .core import validate_tuning

    sys = sc.system
    if sys is None:
        raise ConfigError(f"policy {sc.policy} needs a closed-loop system")
    if sys.gains.mode != sc.policy:
        raise ConfigError(f"policy {sc.policy} does not match gains mode {sys.gains.mode}")
    report = validate_tuning(sys.agents, sys.gains)
    if not report.passed:
        if not sc.force:
            raise TuningError(
                "tuning rule violated; pass force=True/--force to simulate anyway:\n"
                + report.summary())
        log.warning("tuning rule violated, continuing under force:\n%s", report.summary())
    monitor = _setup_monitor(sc)
    s0 = sc.initial if sc.initial is not None else ClosedLoopState.zero(sys.n)
    traj = integrate(sys, s0, sc.t_span, sc.opts, monitor=monitor)
    summary = {
        "policy": sc.policy,
        "n_agents": sys.n,
        "t0": sc.t_span[0],
        "t1": sc.t_span[1],
        "tuning_passed": report.passed,
        "forced": bool(not report.passed and sc.force),
        "monitor_enabled": monitor is not None,
        "monitor_ok": monitor.ok if monitor is not None else "",
        "monitor_violations": len(monitor.violations) if monitor is not None else 0,
        "steps_accepted": traj.stats.accepted,
        "steps_rejected": traj.stats.rejected,
        "field_evaluations": traj.stats.n_field_evals,
    }
    summary.update(_deviation_stats(traj.times, traj.x, sc.temperature))
    if sc.hydraulic_stats is not None:
        summary.update({
            "flow_solves": sc.hydraulic_stats.n_solves,
            "max_mass_residual": sc.hydraulic_stats.max_mass_residual,
            "max_newton_iterations": sc.hydraulic_stats.max_iterations,
        })
    return RunArtifacts(policy=sc.policy, trajectory=traj, times=traj.times,
                        x=traj.x, v=traj.v, summary=summary)


def _run_oracle_policy(sc: Scenario) -> RunArtifacts:
    """Re-solve the static optimal allocation on the output grid.

    The instantaneous optimum under the frozen disturbance w(t) is computed
    for each grid time; consecutive solves start warm from the previous one.
    """
    from . import equilibria  # deferred import, see module docstring

    t0, t1 = sc.t_span
    dt = sc.opts.output_dt if sc.opts.output_dt is not None else (t1 - t0) / 200.0
    rec = _StepRecorder(t0, t1, dt)
    times = rec.grid
    xs = np.empty((len(times), sc.ic.n))
    vs = np.empty((len(times), sc.ic.n))
    costs = np.empty(len(times))
    warm = None
    for k, t in enumerate(times):
        w = sc.agents.w_at(t)
        frozen = AgentEnsemble(a=sc.agents.a, w=w)
        if sc.policy == "oracle-l1":
            res = equilibria.solve_l1_allocation(sc.ic, frozen, warm_start=warm)
        else:
            res = equilibria.solve_linf_allocation(sc.ic, frozen, warm_start=warm)
        xs[k], vs[k], costs[k] = res.x, res.v, res.cost
        warm = res.v
    summary = {
        "policy": sc.policy,
        "n_agents": sc.ic.n,
        "t0": t0,
        "t1": t1,
        "monitor_enabled": False,
        "resolve_interval": dt,
    }
    summary.update(_deviation_stats(times, xs, sc.temperature))
    if sc.hydraulic_stats is not None:
        summary.update({
            "flow_solves": sc.hydraulic_stats.n_solves,
            "max_mass_residual": sc.hydraulic_stats.max_mass_residual,
            "max_newton_iterations": sc.hydraulic_stats.max_iterations,
        })
    return RunArtifacts(policy=sc.policy, trajectory=None, times=times,
                        x=xs, v=vs, summary=summary)
