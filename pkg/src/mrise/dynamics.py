"""Quadrotor plant: forces, torques, rotor lag and the full state derivative.

Plant state layout (16 entries)::

    P (0:3)  V (3:6)  w = (phi, theta, psi) (6:9)  Omega (9:12)  u (12:16)

The attitude kinematics follow ``w_dot = Omega`` (no Euler-rate matrix), the
same simplification the controller is designed around.  This is accurate for
small angles only.

All numeric kernels are numba-compiled so the closed-loop integrator can call
them without leaving machine code; the public functions accept plain arrays
and :class:`~mrise.params.PlantParams`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .params import DisturbanceSpec, PlantParams

NX_PLANT = 16
HALF_PI = 0.5 * np.pi


class ChartViolation(ArithmeticError):
    """Pitch reached +-pi/2, where the Euler-angle chart breaks down."""


@dataclass
class QuadState:
    """Full plant state.  Arrays are copied to float64 on construction."""

    P: np.ndarray = field(default_factory=lambda: np.zeros(3))
    V: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    Omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    u: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        for name, n in (("P", 3), ("V", 3), ("w", 3), ("Omega", 3), ("u", 4)):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.size != n:
                raise ValueError(f"QuadState.{name} needs {n} entries, got {arr.size}")
            setattr(self, name, arr)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.P, self.V, self.w, self.Omega, self.u])

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] < NX_PLANT:
            raise ValueError(f"plant vector needs {NX_PLANT} entries, got {x.shape[-1]}")
        return cls(x[0:3], x[3:6], x[6:9], x[9:12], x[12:16])

    @classmethod
    def hover(cls, params: PlantParams, position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> "QuadState":
        return cls(P=position, w=(0.0, 0.0, yaw), u=np.full(4, params.hover_speed()))

    def is_valid(self) -> bool:
        x = self.to_vector()
        return bool(np.all(np.isfinite(x)) and np.all(self.u >= 0) and abs(self.w[1]) < HALF_PI)


@njit(cache=True)
def thrust_direction(w):
    """Thrust column ``R1`` for Euler angles ``w = (phi, theta, psi)``.

    The second component is kept as ``s_phi s_theta s_psi - c_psi s_phi``; for
    nonzero yaw the column is therefore not exactly unit length.
    """
    sph, cph = np.sin(w[0]), np.cos(w[0])
    sth, cth = np.sin(w[1]), np.cos(w[1])
    sps, cps = np.sin(w[2]), np.cos(w[2])
    out = np.empty(3)
    out[0] = cps * sth * cph + sps * sph
    out[1] = sph * sth * sps - cps * sph
    out[2] = cth * cph
    return out


@njit(cache=True)
def thrust_direction_partials(w):
    """Rows: d R1/d phi, d R1/d theta, d R1/d psi."""
    sph, cph = np.sin(w[0]), np.cos(w[0])
    sth, cth = np.sin(w[1]), np.cos(w[1])
    sps, cps = np.sin(w[2]), np.cos(w[2])
    J = np.empty((3, 3))
    J[0, 0] = -cps * sth * sph + sps * cph
    J[0, 1] = cph * sth * sps - cps * cph
    J[0, 2] = -cth * sph
    J[1, 0] = cps * cth * cph
    J[1, 1] = sph * cth * sps
    J[1, 2] = -sth * cph
    J[2, 0] = -sps * sth * cph + cps * sph
    J[2, 1] = sph * sth * cps + sps * sph
    J[2, 2] = 0.0
    return J


@njit(cache=True)
def _translational_accel(V, w, F_T, d1, m, Kd, g):
    r1 = thrust_direction(w)
    a = np.empty(3)
    for i in range(3):
        a[i] = (r1[i] * F_T - Kd[i] * V[i] + d1[i]) / m
    a[2] -= g
    return a


def translational_accel(s: QuadState, p: PlantParams, F_T: float, d1=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Linear acceleration from gravity, thrust, linear drag and ``d1``."""
    return _translational_accel(s.V, s.w, float(F_T), np.asarray(d1, dtype=np.float64),
                                p.m, np.asarray(p.Kd), p.g)


@njit(cache=True)
def gyroscopic_torque(Omega, u, I_r):
    """``Omega x (0, 0, I_r (u1 - u2 + u3 - u4))``."""
    h = I_r * (u[0] - u[1] + u[2] - u[3])
    out = np.empty(3)
    out[0] = Omega[1] * h
    out[1] = -Omega[0] * h
    out[2] = 0.0
    return out


@njit(cache=True)
def aero_friction_torque(Omega, Ka):
    """Friction torque acting on the body, ``-Ka_i * Omega_i * |Omega_i|``.

    Always opposes the body rate, so it only ever removes kinetic energy.
    """
    out = np.empty(3)
    for i in range(3):
        out[i] = -Ka[i] * Omega[i] * abs(Omega[i])
    return out


@njit(cache=True)
def _mixer_matrix(K_T, K_D, l):
    M = np.empty((4, 4))
    lk = l * K_T
    M[0, 0] = K_T; M[0, 1] = K_T; M[0, 2] = K_T; M[0, 3] = K_T
    M[1, 0] = 0.0; M[1, 1] = -lk; M[1, 2] = 0.0; M[1, 3] = lk
    M[2, 0] = lk; M[2, 1] = 0.0; M[2, 2] = -lk; M[2, 3] = 0.0
    M[3, 0] = K_D; M[3, 1] = -K_D; M[3, 2] = K_D; M[3, 3] = -K_D
    return M


def mixer_matrix(p: PlantParams) -> np.ndarray:
    """4x4 map from squared rotor speeds to ``(F_T, tau_x, tau_y, tau_z)``."""
    return _mixer_matrix(p.K_T, p.K_D, p.l)


@njit(cache=True)
def _mix(u, K_T, K_D, l):
    M = _mixer_matrix(K_T, K_D, l)
    u2 = u * u
    w = M @ u2
    return w[0], w[1:].copy()


def mix_torques(u, p: PlantParams) -> tuple[float, np.ndarray]:
    """Collective thrust magnitude and body torques produced by rotor speeds ``u``."""
    u = np.asarray(u, dtype=np.float64)
    F_T, tau = _mix(u, p.K_T, p.K_D, p.l)
    return float(F_T), tau


@njit(cache=True)
def _rotor_derivative(u, u_c, k_tau, I_r):
    return (k_tau / I_r) * (u_c - u)


def rotor_derivative(u, u_c, p: PlantParams) -> np.ndarray:
    """First-order motor lag toward the commanded speeds."""
    return _rotor_derivative(np.asarray(u, dtype=np.float64), np.asarray(u_c, dtype=np.float64),
                             p.k_tau, p.I_r)


@njit(cache=True)
def _disturbance(t, dist):
    onset, mag, shape, freq, fgain, tgain = dist[0], dist[1], dist[2], dist[3], dist[4], dist[5]
    level = 0.0
    if t >= onset and mag > 0.0:
        if shape == 0.0:
            level = mag
        else:
            level = mag * np.sin(freq * (t - onset))
    d1 = np.full(3, level * fgain)
    d2 = np.full(3, level * tgain)
    return d1, d2


@njit(cache=True)
def _plant_rhs(x, u_c, pp, dist, t):
    """Plant derivative for packed state ``x`` and packed params ``pp``."""
    m = pp[0]
    I = pp[1:4]
    Kd = pp[4:7]
    Ka = pp[7:10]
    K_T, K_D, l, I_r, k_tau, g = pp[10], pp[11], pp[12], pp[13], pp[14], pp[15]

    V = x[3:6]
    w = x[6:9]
    Om = x[9:12]
    u = x[12:16]

    d1, d2 = _disturbance(t, dist)
    F_T, tau = _mix(u, K_T, K_D, l)
    acc = _translational_accel(V, w, F_T, d1, m, Kd, g)

    tau_g = gyroscopic_torque(Om, u, I_r)
    tau_a = aero_friction_torque(Om, Ka)
    IOm0, IOm1, IOm2 = I[0] * Om[0], I[1] * Om[1], I[2] * Om[2]
    # Omega x (I Omega)
    c0 = Om[1] * IOm2 - Om[2] * IOm1
    c1 = Om[2] * IOm0 - Om[0] * IOm2
    c2 = Om[0] * IOm1 - Om[1] * IOm0

    dx = np.empty(NX_PLANT)
    dx[0:3] = V
    dx[3:6] = acc
    dx[6:9] = Om
    dx[9] = (-c0 + tau[0] + tau_a[0] + tau_g[0] + d2[0]) / I[0]
    dx[10] = (-c1 + tau[1] + tau_a[1] + tau_g[1] + d2[1]) / I[1]
    dx[11] = (-c2 + tau[2] + tau_a[2] + tau_g[2] + d2[2]) / I[2]
    dx[12:16] = _rotor_derivative(u, u_c, k_tau, I_r)
    return dx


def state_derivative(s: QuadState, u_c, p_true: PlantParams, d: DisturbanceSpec | None = None,
                     t: float = 0.0) -> QuadState:
    """Time derivative of the plant state, returned as a :class:`QuadState`.

    Raises :class:`ChartViolation` when ``|theta| >= pi/2``.
    """
    if abs(s.w[1]) >= HALF_PI:
        raise ChartViolation(f"pitch {s.w[1]:.6f} rad outside (-pi/2, pi/2)")
    dist = (d or DisturbanceSpec()).as_array()
    dx = _plant_rhs(s.to_vector(), np.asarray(u_c, dtype=np.float64), p_true.as_array(), dist, float(t))
    return QuadState.from_vector(dx)
