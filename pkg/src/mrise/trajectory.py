"""Reference trajectories and the flatness map to desired attitude.

Flat outputs are position and yaw.  Given a desired specific-force vector
``a = Ad + g e3`` and yaw, :func:`flatness_attitude` finds roll, pitch and a
thrust scale ``s`` with ``thrust_direction(phi, theta, psi) * s == a``.  The
thrust column used by the plant is not an exact rotation column, so the
textbook closed form only serves as the starting guess of a damped
least-squares solve.  Where no attitude reaches ``a`` exactly the solver
returns the closest reachable force.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from numba import njit

from .dynamics import thrust_direction, thrust_direction_partials
from .params import GRAVITY, ConfigError, PlantParams, _checked_kwargs

TRAJECTORIES = ("helix", "hover")

_FLAT_TOL = 1e-13
_FLAT_MAXITER = 60
# Marquardt damping of the rate solve, relative to each diagonal entry;
# biases well-posed rates by about 1e-6
_RATE_DAMPING = 1e-3
_FLAT_MIN_THRUST = 1e-6


class SingularReference(ArithmeticError):
    """The requested acceleration needs (near) zero thrust, or no attitude realises it."""


@dataclass(frozen=True)
class TrajectorySpec:
    """Built-in reference.

    ``helix``: ``x = A sin(wt)``, ``y = A cos(wt)``, ``z = c t``,
    ``psi = Y sin(wt)``, offset by ``origin``.  With the defaults this is the
    helix ``(3 sin t, 3 cos t, t, sin t)``.  ``hover`` holds
    ``origin`` with zero yaw.
    """

    kind: str = "helix"
    amplitude: float = 3.0
    frequency: float = 1.0
    climb_rate: float = 1.0
    yaw_amplitude: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in TRAJECTORIES:
            raise ConfigError(f"unknown trajectory {self.kind!r}; expected one of {TRAJECTORIES}")
        origin = np.asarray(self.origin, dtype=float).reshape(-1)
        if origin.size != 3 or not np.all(np.isfinite(origin)):
            raise ConfigError("trajectory origin must be 3 finite numbers")
        object.__setattr__(self, "origin", tuple(float(v) for v in origin))

    def as_array(self) -> np.ndarray:
        return np.array([float(TRAJECTORIES.index(self.kind)), self.amplitude, self.frequency,
                         self.climb_rate, self.yaw_amplitude, *self.origin], dtype=np.float64)

    def bounds(self, horizon: float) -> dict[str, float]:
        """Upper bounds of ``|Pd|, |Vd|, |Ad|, |Jd|`` over ``[0, horizon]``."""
        o = float(np.linalg.norm(self.origin))
        if self.kind == "hover":
            return {"Pd": o, "Vd": 0.0, "Ad": 0.0, "Jd": 0.0}
        A, w, c = abs(self.amplitude), abs(self.frequency), abs(self.climb_rate)
        return {
            "Pd": o + float(np.hypot(A, c * horizon)),
            "Vd": float(np.hypot(A * w, c)),
            "Ad": A * w**2,
            "Jd": A * w**3,
        }

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["origin"] = list(self.origin)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrajectorySpec":
        return cls(**_checked_kwargs(cls, data, "trajectory"))


DEFAULT_HELIX = TrajectorySpec()


@dataclass
class ReferenceSample:
    t: float
    Pd: np.ndarray
    Vd: np.ndarray
    Ad: np.ndarray
    Jd: np.ndarray
    psi_d: float
    psi_d_dot: float
    w_d: np.ndarray
    Omega_d: np.ndarray


@njit(cache=True)
def _flat_outputs(t, traj):
    """Position/yaw and derivatives.  Returns ``(Pd, Vd, Ad, Jd, psi, psi_dot)``."""
    Pd = traj[5:8].copy()
    Vd = np.zeros(3)
    Ad = np.zeros(3)
    Jd = np.zeros(3)
    psi = 0.0
    psid = 0.0
    if traj[0] == 0.0:
        A, w, c, Y = traj[1], traj[2], traj[3], traj[4]
        s, co = np.sin(w * t), np.cos(w * t)
        Pd[0] += A * s
        Pd[1] += A * co
        Pd[2] += c * t
        Vd[0] = A * w * co
        Vd[1] = -A * w * s
        Vd[2] = c
        Ad[0] = -A * w * w * s
        Ad[1] = -A * w * w * co
        Jd[0] = -A * w * w * w * co
        Jd[1] = A * w * w * w * s
        psi = Y * s
        psid = Y * w * co
    return Pd, Vd, Ad, Jd, psi, psid


@njit(cache=True)
def _solve3(J, b):
    """Cramer's rule for a 3x3 system; returns (x, det)."""
    det = (J[0, 0] * (J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
           - J[0, 1] * (J[1, 0] * J[2, 2] - J[1, 2] * J[2, 0])
           + J[0, 2] * (J[1, 0] * J[2, 1] - J[1, 1] * J[2, 0]))
    x = np.zeros(3)
    if det == 0.0:
        return x, det
    for k in range(3):
        Jk = J.copy()
        for i in range(3):
            Jk[i, k] = b[i]
        x[k] = (Jk[0, 0] * (Jk[1, 1] * Jk[2, 2] - Jk[1, 2] * Jk[2, 1])
                - Jk[0, 1] * (Jk[1, 0] * Jk[2, 2] - Jk[1, 2] * Jk[2, 0])
                + Jk[0, 2] * (Jk[1, 0] * Jk[2, 1] - Jk[1, 1] * Jk[2, 0])) / det
    return x, det


@njit(cache=True)
def _flatness_jacobian(phi, theta, psi, s):
    """d(s * R1)/d(phi, theta, s) as a 3x3 matrix (columns = unknowns)."""
    w = np.array([phi, theta, psi])
    r1 = thrust_direction(w)
    D = thrust_direction_partials(w)
    J = np.empty((3, 3))
    for i in range(3):
        J[i, 0] = s * D[0, i]
        J[i, 1] = s * D[1, i]
        J[i, 2] = r1[i]
    return J


@njit(cache=True)
def _residual(phi, theta, psi, s, a):
    w = np.array([phi, theta, psi])
    r = s * thrust_direction(w) - a
    return r, np.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2)


@njit(cache=True)
def _normal_equations(J, v, mu):
    """``(J^T J + mu I)`` and ``J^T v``."""
    A = np.empty((3, 3))
    g = np.empty(3)
    for i in range(3):
        g[i] = J[0, i] * v[0] + J[1, i] * v[1] + J[2, i] * v[2]
        for j in range(3):
            A[i, j] = J[0, i] * J[0, j] + J[1, i] * J[1, j] + J[2, i] * J[2, j]
        A[i, i] += mu
    return A, g


@njit(cache=True)
def _flatness_solve(a, psi, guess=None):
    """Least-squares solution of ``s * R1(phi, theta, psi) = a``.

    Levenberg-Marquardt from the textbook closed form, or from ``guess``
    ``(phi, theta)`` when given.  Warm starting keeps the solution on one
    branch where the least-squares problem has several local minima.  Where an exact root
    exists it converges like Newton; where the thrust column cannot point
    along ``a`` (it is not a full rotation column) the closest reachable force
    is returned instead.  Returns ``(phi, theta, s, exact, valid)``; ``valid``
    means positive thrust inside the Euler chart.
    """
    na = np.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    if na < _FLAT_MIN_THRUST:
        return 0.0, 0.0, 0.0, False, False
    sps, cps = np.sin(psi), np.cos(psi)
    theta = np.arctan2(a[0] * cps + a[1] * sps, a[2])
    arg = min(1.0, max(-1.0, (a[0] * sps - a[1] * cps) / na))
    phi = np.arcsin(arg)
    if guess is not None:
        phi, theta = guess[0], guess[1]
    s = na
    tol = _FLAT_TOL * max(1.0, na)
    res, rn = _residual(phi, theta, psi, s, a)
    mu_floor = 1e-15 * na * na
    mu = 1e-6 * na * na
    for _ in range(_FLAT_MAXITER):
        if rn <= tol:
            break
        J = _flatness_jacobian(phi, theta, psi, s)
        A, g = _normal_equations(J, res, 0.0)
        if np.sqrt(g[0] ** 2 + g[1] ** 2 + g[2] ** 2) <= _FLAT_TOL * na * na:
            break  # stationary: closest reachable point
        improved = False
        for _ in range(40):
            for i in range(3):
                A[i, i] += mu
            step, det = _solve3(A, g)
            for i in range(3):
                A[i, i] -= mu
            if det != 0.0:
                r_new, rn_new = _residual(phi - step[0], theta - step[1], psi, s - step[2], a)
                if rn_new < rn:
                    phi -= step[0]
                    theta -= step[1]
                    s -= step[2]
                    res = r_new
                    rn = rn_new
                    mu = max(mu / 10.0, mu_floor)
                    improved = True
                    break
            mu *= 10.0
        if not improved:
            break
    valid = s > 0.0 and abs(theta) < 0.5 * np.pi and abs(phi) < 0.5 * np.pi and np.isfinite(rn)
    exact = valid and rn <= 1e3 * tol
    return phi, theta, s, exact, valid


@njit(cache=True)
def _flatness(a, psi):
    """Exact solution of ``s * R1(phi, theta, psi) = a``.  Returns ``(phi, theta, s, ok)``."""
    phi, theta, s, exact, _ = _flatness_solve(a, psi)
    return phi, theta, s, exact


@njit(cache=True)
def _flatness_rates(phi, theta, psi, s, a_dot, psi_dot):
    """Time derivatives ``(phi_dot, theta_dot, s_dot)`` of the flatness solution.

    Implicit differentiation of ``s R1(phi, theta, psi) - a = 0``, solved as a
    lightly damped least-squares problem so the rates stay bounded where the
    Jacobian degenerates.
    """
    J = _flatness_jacobian(phi, theta, psi, s)
    D = thrust_direction_partials(np.array([phi, theta, psi]))
    b = np.empty(3)
    for i in range(3):
        b[i] = a_dot[i] - s * D[2, i] * psi_dot
    A, g = _normal_equations(J, b, 0.0)
    for i in range(3):
        A[i, i] += _RATE_DAMPING ** 2 * A[i, i] + 1e-12 * (s * s + 1.0)
    x, _ = _solve3(A, g)
    return x[0], x[1], x[2]


def flatness_attitude(Ad, psi_d: float, p_nominal: PlantParams | None = None) -> tuple[float, float, float]:
    """Roll, pitch and feedforward thrust that realise acceleration ``Ad`` at yaw ``psi_d``.

    Returns ``(phi_d, theta_d, F_ff)`` with ``thrust_direction(phi_d, theta_d,
    psi_d) * F_ff / m == Ad + (0, 0, g)``.
    """
    p = p_nominal or PlantParams()
    a = np.asarray(Ad, dtype=np.float64) + np.array([0.0, 0.0, p.g])
    phi, theta, s, ok = _flatness(a, float(psi_d))
    if not ok:
        raise SingularReference(f"no attitude realises specific force {a} at yaw {psi_d}")
    return float(phi), float(theta), float(p.m * s)


def reference_signal(t: float, traj: TrajectorySpec = DEFAULT_HELIX, g: float = GRAVITY) -> ReferenceSample:
    """Reference at time ``t`` with analytic derivatives.

    ``w_d`` and ``Omega_d`` are the attitude and Euler rates that realise the
    feedforward acceleration exactly (no feedback).
    """
    if t < 0:
        raise ValueError("reference time must be >= 0")
    Pd, Vd, Ad, Jd, psi, psid = _flat_outputs(float(t), traj.as_array())
    a = Ad + np.array([0.0, 0.0, g])
    phi, theta, s, ok = _flatness(a, psi)
    if not ok:
        raise SingularReference(f"reference at t={t} is not realisable")
    phid, thetad, _ = _flatness_rates(phi, theta, psi, s, Jd, psid)
    return ReferenceSample(
        t=float(t), Pd=Pd, Vd=Vd, Ad=Ad, Jd=Jd, psi_d=float(psi), psi_d_dot=float(psid),
        w_d=np.array([phi, theta, psi]), Omega_d=np.array([phid, thetad, psid]),
    )


def desired_rates(w_d, dt: float) -> np.ndarray:
    """Euler rates from a uniformly sampled attitude sequence (rows = samples).

    Central differences inside, second-order one-sided differences at the ends.
    """
    w_d = np.asarray(w_d, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if w_d.shape[0] < 3:
        raise ValueError(f"need at least 3 samples, got {w_d.shape[0]}")
    return np.gradient(w_d, dt, axis=0, edge_order=2)
