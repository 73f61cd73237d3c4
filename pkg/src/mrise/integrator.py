"""Fixed-step RK4 over the plant and the controller's own ODE states.

The control vectors, adaptive gains and derivative-filter memories are
integrated in the same Runge-Kutta tableau as the plant, so every stage
re-evaluates the control law.  Time stamps are ``t0 + k * dt`` computed from
the step index, never accumulated.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numba import njit

from .config import Scenario, params_hash
from .controller import (NTELE, NX, X_F, X_LAM1, X_LAM2, X_T, X_ZOMD, LoopState, T_EOM, T_ETA1, T_ETA2,
                         T_EV, T_FT, T_SAT, T_TAU, T_UC, T_XI1, T_XI2, T_XI3, T_XI4, T_OMD, T_WD,
                         _controller, allocation_matrix)
from .dynamics import QuadState, _plant_rhs
from .trajectory import _flat_outputs, reference_signal

log = logging.getLogger(__name__)

STATUS_OK, STATUS_CHART, STATUS_DIVERGED, STATUS_SINGULAR, STATUS_NONFINITE = range(5)
_STATUS_TEXT = {
    STATUS_CHART: "pitch left the Euler-angle chart (|theta| >= pi/2)",
    STATUS_DIVERGED: "state exceeded the divergence bound",
    STATUS_SINGULAR: "position command has no realising attitude",
    STATUS_NONFINITE: "non-finite state",
}

CSV_COLUMNS = (
    ["t", "x", "y", "z", "phi", "theta", "psi", "p", "q", "r", "u1", "u2", "u3", "u4",
     "ex", "ey", "ez", "ephi", "etheta", "epsi"]
    + [f"lam1_{i}" for i in (1, 2, 3)] + [f"lam2_{i}" for i in (1, 2, 3)]
    + ["FT", "taux", "tauy", "tauz", "sat"]
)


class SimulationError(RuntimeError):
    """Run aborted; ``log`` holds the records up to the failure."""

    def __init__(self, message: str, status: int, t: float, log: "RunLog | None" = None):
        super().__init__(message)
        self.status = status
        self.t = t
        self.log = log


class SimulationDiverged(SimulationError):
    pass


class ChartViolationError(SimulationError):
    pass


def rk4_step(x, t: float, dt: float, rhs: Callable) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of ``x' = rhs(t, x)``."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x = np.asarray(x, dtype=np.float64)
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = rhs(t + dt, x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite state after RK4 step at t={t}")
    return out


@njit(cache=True)
def _closed_loop(t, x, traj, gp, pn, pt, dist, Binv):
    ref = _flat_outputs(t, traj)
    # accelerations do not depend on the rotor command, only the rotor lag does
    dx = np.empty(x.shape[0])
    xp = x[0:16]
    dx[0:16] = _plant_rhs(xp, xp[12:16], pt, dist, t)
    acc = np.empty(6)
    acc[0:3] = dx[3:6]
    acc[3:6] = dx[9:12]
    u_c, dctrl, tele = _controller(x, acc, ref, gp, pn, Binv)
    dx[12:16] = (pt[14] / pt[13]) * (u_c - xp[12:16])
    dx[16:] = dctrl
    return dx, tele


def closed_loop_rhs(t: float, x, traj, gp, pn, pt, dist, Binv) -> np.ndarray:
    """Derivative of the augmented state (packed-array arguments)."""
    dx, _ = _closed_loop(float(t), np.asarray(x, dtype=np.float64), traj, gp, pn, pt, dist, Binv)
    return dx


@njit(cache=True)
def _check(x, max_pos, max_rate):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return STATUS_NONFINITE
    if abs(x[7]) >= 0.5 * np.pi:
        return STATUS_CHART
    if np.sqrt(x[0] ** 2 + x[1] ** 2 + x[2] ** 2) > max_pos:
        return STATUS_DIVERGED
    if np.sqrt(x[9] ** 2 + x[10] ** 2 + x[11] ** 2) > max_rate:
        return STATUS_DIVERGED
    return STATUS_OK


@njit(cache=True)
def _run(x0, t0, dt, n_steps, traj, gp, pn, pt, dist, Binv, max_pos, max_rate):
    """Integrate ``n_steps`` RK4 steps.  Returns ``(X, TELE, status, last_index)``."""
    nx = x0.shape[0]
    X = np.full((n_steps + 1, nx), np.nan)
    TELE = np.full((n_steps + 1, NTELE), np.nan)
    x = x0.copy()
    X[0] = x
    status = _check(x, max_pos, max_rate)
    if status != STATUS_OK:
        return X, TELE, status, 0
    half = 0.5 * dt
    for k in range(n_steps):
        t = t0 + k * dt
        k1, tele = _closed_loop(t, x, traj, gp, pn, pt, dist, Binv)
        TELE[k] = tele
        if tele[35] == 0.0:
            return X, TELE, STATUS_SINGULAR, k
        k2, _ = _closed_loop(t + half, x + half * k1, traj, gp, pn, pt, dist, Binv)
        k3, _ = _closed_loop(t + half, x + half * k2, traj, gp, pn, pt, dist, Binv)
        k4, _ = _closed_loop(t + dt, x + dt * k3, traj, gp, pn, pt, dist, Binv)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[k + 1] = x
        status = _check(x, max_pos, max_rate)
        if status != STATUS_OK:
            return X, TELE, status, k + 1
    _, tele = _closed_loop(t0 + n_steps * dt, x, traj, gp, pn, pt, dist, Binv)
    TELE[n_steps] = tele
    if tele[35] == 0.0:
        return X, TELE, STATUS_SINGULAR, n_steps
    return X, TELE, STATUS_OK, n_steps


@dataclass
class RunLog:
    """Per-step record of one closed-loop run.

    ``X`` holds the augmented state (plant, position loop, attitude loop) and
    ``tele`` the controller telemetry evaluated at the same instants.
    """

    t: np.ndarray
    X: np.ndarray
    tele: np.ndarray
    mode: str
    dt: float
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.shape[0]

    # plant
    P = property(lambda self: self.X[:, 0:3])
    V = property(lambda self: self.X[:, 3:6])
    w = property(lambda self: self.X[:, 6:9])
    Omega = property(lambda self: self.X[:, 9:12])
    u = property(lambda self: self.X[:, 12:16])
    # controller internals
    F_V = property(lambda self: self.X[:, X_F])
    tau_Omega = property(lambda self: self.X[:, X_T])
    lambda1 = property(lambda self: self.X[:, X_LAM1])
    lambda2 = property(lambda self: self.X[:, X_LAM2])
    # telemetry
    xi1 = property(lambda self: self.tele[:, T_XI1])
    xi2 = property(lambda self: self.tele[:, T_XI2])
    xi3 = property(lambda self: self.tele[:, T_XI3])
    xi4 = property(lambda self: self.tele[:, T_XI4])
    eta1 = property(lambda self: self.tele[:, T_ETA1])
    eta2 = property(lambda self: self.tele[:, T_ETA2])
    e_V = property(lambda self: self.tele[:, T_EV])
    e_Omega = property(lambda self: self.tele[:, T_EOM])
    w_d = property(lambda self: self.tele[:, T_WD])
    Omega_d = property(lambda self: self.tele[:, T_OMD])
    F_T = property(lambda self: self.tele[:, T_FT])
    tau = property(lambda self: self.tele[:, T_TAU])
    u_c = property(lambda self: self.tele[:, T_UC])
    saturated = property(lambda self: self.tele[:, T_SAT] > 0.5)

    def state(self, k: int) -> QuadState:
        return QuadState.from_vector(self.X[k, :16])

    def csv_rows(self):
        data = np.column_stack([
            self.t, self.P, self.w, self.Omega, self.u, self.xi1, self.xi3,
            self.lambda1, self.lambda2, self.F_T, self.tau, self.saturated.astype(float),
        ])
        for row in data:
            yield [repr(float(v)) for v in row[:-1]] + [str(int(row[-1]))]

    def to_csv(self, path: str | Path | None = None) -> str | None:
        """Write the canonical CSV.  Returns the text when ``path`` is None."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(self.csv_rows())
        if path is None:
            return buf.getvalue()
        Path(path).write_text(buf.getvalue())
        return None


def initial_state(scenario: Scenario) -> np.ndarray:
    """Augmented state at t=0: offset from the reference, rotors at the commanded speed.

    With ``match_reference_velocity`` the vehicle also starts at the reference
    velocity and at the attitude that realises the reference acceleration.
    """
    p = scenario.plant
    g = scenario.gains.for_mode(scenario.mode)
    r0 = reference_signal(0.0, scenario.trajectory, p.g)
    V0 = r0.Vd if scenario.match_reference_velocity else np.zeros(3)
    w0 = r0.w_d if scenario.match_reference_velocity else np.array([0.0, 0.0, r0.psi_d])
    s0 = QuadState(P=r0.Pd + np.asarray(scenario.initial_offset), V=V0, w=w0,
                   u=np.full(4, p.hover_speed()))
    x = np.zeros(NX)
    x[0:16] = s0.to_vector()
    x[X_F] = r0.Ad + np.array([0.0, 0.0, p.g])
    x[X_LAM1] = g.lambda0
    x[X_LAM2] = g.lambda0
    x[X_ZOMD] = r0.Omega_d
    _, tele = _closed_loop(0.0, x, scenario.trajectory.as_array(), g.as_array(), p.as_array(),
                           p.as_array(), scenario.disturbance.as_array(), allocation_matrix(p))
    x[12:16] = tele[T_UC]
    return x


def simulate(scenario: Scenario, mode: str | None = None, *, p_true=None, x0=None,
             raise_on_failure: bool = True) -> RunLog:
    """Run ``scenario`` over ``[0, horizon]``.

    The plant is driven by the perturbed (true) parameters while the
    controller only ever sees the nominal ones.  Raises
    :class:`SimulationDiverged` (or :class:`ChartViolationError`) with the
    partial log attached unless ``raise_on_failure`` is False.
    """
    if mode is not None:
        scenario = scenario.replace(mode=mode)
    g = scenario.gains.for_mode(scenario.mode)
    p_nom = scenario.plant
    p_true = p_true if p_true is not None else scenario.true_params()
    n = scenario.n_steps
    if x0 is None:
        x0 = initial_state(scenario)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (NX,):
        raise ValueError(f"augmented state must have {NX} entries")

    X, TELE, status, last = _run(
        x0, 0.0, float(scenario.dt), n, scenario.trajectory.as_array(), g.as_array(),
        p_nom.as_array(), p_true.as_array(), scenario.disturbance.as_array(),
        allocation_matrix(p_nom), float(scenario.max_position), float(scenario.max_rate),
    )
    t = np.arange(n + 1, dtype=np.float64) * scenario.dt
    meta = {"p_true_hash": params_hash(p_true), "p_nominal_hash": params_hash(p_nom),
            "status": int(status), "seed": scenario.seed,
            "uncertainty_level": scenario.uncertainty_level}
    if status == STATUS_OK:
        return RunLog(t, X, TELE, scenario.mode, scenario.dt, meta)

    runlog = RunLog(t[: last + 1], X[: last + 1], TELE[: last + 1], scenario.mode, scenario.dt, meta)
    msg = f"{scenario.mode} run aborted at t={t[last]:.3f}s: {_STATUS_TEXT[status]}"
    log.warning(msg)
    if not raise_on_failure:
        return runlog
    cls = ChartViolationError if status == STATUS_CHART else SimulationDiverged
    raise cls(msg, status, float(t[last]), runlog)


def loop_states(runlog: RunLog, k: int) -> tuple[LoopState, LoopState]:
    """Loop states at record ``k``; ``xi_prev`` is the recorded filtered error."""
    x = runlog.X[k]
    return (LoopState(x[X_F], x[X_LAM1], runlog.xi2[k]), LoopState(x[X_T], x[X_LAM2], runlog.xi4[k]))
