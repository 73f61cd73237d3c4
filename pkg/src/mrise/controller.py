"""Adaptive modified-RISE position/attitude controller.

Both loops share one structure.  With tracking error ``xi_a``, filtered error
``xi_b = xi_a' + k_a xi_a`` and auxiliary error ``eta = xi_b' + k_b xi_b`` the
control vector ``c`` and adaptive gain ``lam`` evolve as::

    c'   = -alpha_n |c| S(eta) - (alpha + 1) eta - lam * S(eta)
    lam' = beta * S(eta) * eta

where ``S`` is the tanh-smoothed signum and products are elementwise.

The position-loop vector ``F_V`` is a specific-force command (m/s^2): its
direction sets the desired roll/pitch through the flatness map and its
scale gives thrust.  The attitude-loop vector ``tau_Omega`` is the body torque
command (N m) handed straight to the mixer.

The auxiliary error needs ``xi_b'``.  The discrete update
(:func:`controller_step`) takes a backward difference against ``xi_prev``.
The continuous-time loop used by the integrator takes the dt -> 0 limit of
that difference: it reads the measured linear and angular accelerations and
only the desired body rate, an internal signal, is differentiated through a
first-order filter with time constant ``tau_f``.

Both integrators carry back-calculation anti-windup.  While the tilt envelope
bends the force command, ``F_V`` is pulled towards the bent command; while the
mixer clamps a rotor, ``tau_Omega`` is pulled towards the torque the clamped
rotors deliver.  The matching adaptive gain is held while its integrator still
moves away from that target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .dynamics import QuadState, mix_torques, mixer_matrix
from .params import Gains, PlantParams
from .trajectory import ReferenceSample, SingularReference, _flatness_rates, _flatness_solve

log = logging.getLogger(__name__)

MODES = ("adaptive", "baseline")

# augmented-state layout beyond the 16 plant entries; X_ZOMD is the filter
# memory of the desired body rate
X_F, X_LAM1 = slice(16, 19), slice(19, 22)
X_T, X_LAM2, X_ZOMD = slice(22, 25), slice(25, 28), slice(28, 31)
NX = 31

# telemetry layout returned by the compiled controller
(T_XI1, T_EV, T_XI3, T_EOM, T_ETA1, T_ETA2, T_XI2, T_XI4, T_WD, T_OMD) = (
    slice(3 * i, 3 * i + 3) for i in range(10)
)
T_FT, T_TAU, T_SAT, T_OK, T_UC = 30, slice(31, 34), 34, 35, slice(36, 40)
NTELE = 40


class SingularMixer(np.linalg.LinAlgError):
    pass


@dataclass
class LoopState:
    """Internal state of one control loop."""

    u_int: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lambda_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    xi_prev: np.ndarray | None = None

    def __post_init__(self):
        self.u_int = np.array(self.u_int, dtype=np.float64).reshape(3)
        self.lambda_hat = np.array(self.lambda_hat, dtype=np.float64).reshape(3)
        if self.xi_prev is not None:
            self.xi_prev = np.array(self.xi_prev, dtype=np.float64).reshape(3)


@dataclass
class ErrorBundle:
    xi_a: np.ndarray
    xi_b: np.ndarray
    eta: np.ndarray


@njit(cache=True)
def _smooth_sign(x, kappa):
    if np.isinf(kappa):
        return np.sign(x)
    return np.tanh(kappa * x)


def smooth_sign(x, kappa_s: float) -> np.ndarray:
    """``tanh(kappa_s * x)``; ``kappa_s = inf`` gives the exact signum."""
    if not kappa_s > 0:
        raise ValueError("kappa_s must be > 0")
    return _smooth_sign(np.asarray(x, dtype=np.float64), float(kappa_s))


@njit(cache=True)
def _errors(q, q_dot, q_d, q_dot_d, k_a, k_b, xi_prev, h):
    xi_a = q - q_d
    xi_b = q_dot - (q_dot_d - k_a * xi_a)
    eta = (xi_b - xi_prev) / h + k_b * xi_b
    return xi_a, xi_b, eta


def _bundle(q, q_dot, q_d, q_dot_d, k_a, k_b, prev: LoopState, dt: float) -> ErrorBundle:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    xi_a = q - q_d
    xi_b = q_dot - (q_dot_d - k_a * xi_a)
    xi_prev = xi_b if prev.xi_prev is None else prev.xi_prev
    xi_a, xi_b, eta = _errors(q, q_dot, q_d, q_dot_d, k_a, k_b, xi_prev, float(dt))
    return ErrorBundle(xi_a, xi_b, eta)


def position_errors(s: QuadState, r: ReferenceSample, g: Gains, prev: LoopState, dt: float) -> ErrorBundle:
    """Position tracking error, filtered velocity error and auxiliary error.

    With no stored ``prev.xi_prev`` the derivative term is taken as zero.
    """
    return _bundle(s.P, s.V, r.Pd, r.Vd, g.k1, g.k2, prev, dt)


def attitude_errors(s: QuadState, r: ReferenceSample, g: Gains, prev: LoopState, dt: float) -> ErrorBundle:
    """Attitude counterpart of :func:`position_errors` using ``r.w_d``/``r.Omega_d``."""
    return _bundle(s.w, s.Omega, r.w_d, r.Omega_d, g.k3, g.k4, prev, dt)


@njit(cache=True)
def _control_rate(eta, u_int, lam, alpha_n, alpha, kappa):
    sg = _smooth_sign(eta, kappa)
    nrm = np.sqrt(u_int[0] ** 2 + u_int[1] ** 2 + u_int[2] ** 2)
    return -alpha_n * nrm * sg - (alpha + 1.0) * eta - lam * sg


@njit(cache=True)
def _adapt_rate(eta, beta, kappa):
    return beta * _smooth_sign(eta, kappa) * eta


def _loop_gains(g: Gains, which_loop: str) -> tuple[float, float, float]:
    if which_loop == "position":
        return g.alpha_F, g.alpha1, g.beta1
    if which_loop == "attitude":
        return g.alpha_tau, g.alpha2, g.beta2
    raise ValueError(f"which_loop must be 'position' or 'attitude', got {which_loop!r}")


def control_rate(eta, u_int, lambda_hat, g: Gains, which_loop: str) -> np.ndarray:
    """Time derivative of the integrated control vector."""
    alpha_n, alpha, _ = _loop_gains(g, which_loop)
    return _control_rate(np.asarray(eta, dtype=np.float64), np.asarray(u_int, dtype=np.float64),
                         np.asarray(lambda_hat, dtype=np.float64), alpha_n, alpha, g.kappa_s)


def adapt_rate(eta, g: Gains, which_loop: str) -> np.ndarray:
    """Time derivative of the adaptive gain; nonnegative in every component."""
    _, _, beta = _loop_gains(g, which_loop)
    return _adapt_rate(np.asarray(eta, dtype=np.float64), beta, g.kappa_s)


@njit(cache=True)
def _allocate(F_T, tau, Binv, u_max):
    w = np.empty(4)
    w[0] = F_T
    w[1:] = tau
    u2 = Binv @ w
    sat = False
    u_c = np.empty(4)
    for i in range(4):
        if u2[i] < 0.0:
            u2[i] = 0.0
            sat = True
        u_c[i] = np.sqrt(u2[i])
        if u_c[i] > u_max:
            u_c[i] = u_max
            sat = True
    return u_c, sat


def allocation_matrix(p: PlantParams) -> np.ndarray:
    """Inverse mixer.  Raises :class:`SingularMixer` for degenerate geometry."""
    M = mixer_matrix(p)
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e14:
        raise SingularMixer("rotor mixer is singular for these parameters")
    return np.linalg.inv(M)


def allocate(F_T: float, tau, p_nominal: PlantParams, return_saturation: bool = False):
    """Rotor speed commands that produce thrust ``F_T`` and torque ``tau``.

    Negative squared speeds are clamped to zero and speeds above ``u_max``
    to ``u_max``; either event is logged as a saturation.
    """
    u_c, sat = _allocate(float(F_T), np.asarray(tau, dtype=np.float64),
                         allocation_matrix(p_nominal), p_nominal.u_max)
    if sat:
        log.info("allocation saturated: F_T=%g tau=%s -> u_c=%s", F_T, np.asarray(tau), u_c)
    if return_saturation:
        return u_c, bool(sat)
    return u_c


# the commanded vertical specific force never drops below this fraction of g
_MIN_LIFT = 0.2
# the tilt envelope is the identity up to this fraction of the cone radius
_TILT_KNEE = 0.7


@njit(cache=True)
def _tilt_envelope(F, Fdot, max_tilt, g):
    """Soft-limit ``F`` to the cone of half-angle ``max_tilt`` around +z.

    The horizontal magnitude ``h`` is left alone up to ``_TILT_KNEE`` of the
    cone radius ``c`` and bent smoothly (tanh) towards ``c`` above it, so the
    map and its derivative stay continuous.  Returns ``(F_c, F_c', active)``.
    """
    Fc = F.copy()
    Fcd = Fdot.copy()
    active = False
    if Fc[2] < _MIN_LIFT * g:
        Fc[2] = _MIN_LIFT * g
        Fcd[2] = 0.0
        active = True
    h = np.sqrt(F[0] ** 2 + F[1] ** 2)
    tt = np.tan(max_tilt)
    c = tt * Fc[2]
    if h > _TILT_KNEE * c:
        cd = tt * Fcd[2]
        hd = (F[0] * Fdot[0] + F[1] * Fdot[1]) / h
        rho = h / c
        rhod = (hd * c - h * cd) / (c * c)
        span = 1.0 - _TILT_KNEE
        th = np.tanh((rho - _TILT_KNEE) / span)
        f = _TILT_KNEE + span * th
        fd = (1.0 - th * th) * rhod
        r = c * f
        rd = cd * f + c * fd
        for i in range(2):
            u = F[i] / h
            ud = (Fdot[i] - u * hd) / h
            Fc[i] = r * u
            Fcd[i] = rd * u + r * ud
        active = True
    return Fc, Fcd, active


# anti-windup time constants [s]: torque integral while the rotors saturate,
# position integral while the tilt envelope bends the command
AW_TAU = 0.01
AW_TAU_F = 0.5


@njit(cache=True)
def _controller(x, acc, traj_out, gp, pn, Binv):
    """Control law on the augmented state ``x``.

    ``acc`` holds the measured accelerations ``(V', Omega')`` (6 entries) and
    ``traj_out`` is ``(Pd, Vd, Ad, Jd, psi, psi_dot)``.  Returns
    ``(u_c, dctrl, tele)`` where ``dctrl`` is the derivative of ``x[16:]``.
    """
    Pd, Vd, Ad, _Jd, psi, psid = traj_out
    k1, k2, k3, k4 = gp[0], gp[1], gp[2], gp[3]
    aF, aT, a1, a2 = gp[4], gp[5], gp[6], gp[7]
    b1, b2, kappa, tau_f = gp[8], gp[9], gp[10], gp[11]
    max_tilt = gp[13]

    P, V, w, Om = x[0:3], x[3:6], x[6:9], x[9:12]
    F, lam1 = x[16:19], x[19:22]
    T, lam2, z = x[22:25], x[25:28], x[28:31]
    Vdot, Omdot = acc[0:3], acc[3:6]

    tele = np.zeros(NTELE)
    dctrl = np.zeros(NX - 16)

    xi1 = P - Pd
    xi2 = V - Vd + k1 * xi1
    eta1 = (Vdot - Ad + k1 * (V - Vd)) + k2 * xi2
    Fdot = _control_rate(eta1, F, lam1, aF, a1, kappa)
    dctrl[0:3] = Fdot
    dctrl[3:6] = _adapt_rate(eta1, b1, kappa)

    Fc, Fcd, clip = _tilt_envelope(F, Fdot, max_tilt, pn[15])
    if clip:
        # back-calculation against the envelope, as for the torque integral below
        for i in range(3):
            dctrl[i] -= (F[i] - Fc[i]) / AW_TAU_F
            if dctrl[i] * (F[i] - Fc[i]) > 0.0:
                dctrl[3 + i] = 0.0
    phi_d, theta_d, s, _exact, ok = _flatness_solve(Fc, psi, w[0:2])
    if not ok:
        phi_d, theta_d, s, _exact, ok = _flatness_solve(Fc, psi)
    phid, thetad, _sd = _flatness_rates(phi_d, theta_d, psi, s, Fcd, psid)
    w_d = np.array([phi_d, theta_d, psi])
    Om_d = np.array([phid, thetad, psid])
    Omd_dot = (Om_d - z) / tau_f

    xi3 = w - w_d
    xi4 = Om - Om_d + k3 * xi3
    eta2 = (Omdot - Omd_dot + k3 * (Om - Om_d)) + k4 * xi4
    dctrl[6:9] = _control_rate(eta2, T, lam2, aT, a2, kappa)
    dctrl[9:12] = _adapt_rate(eta2, b2, kappa)
    dctrl[12:15] = Omd_dot

    F_T = pn[0] * s
    u_c, sat = _allocate(F_T, T, Binv, pn[16])
    if sat:
        # back-calculation: bleed the torque integral towards what the clamped rotors deliver
        tau_a = np.linalg.solve(Binv, u_c * u_c)[1:]
        for i in range(3):
            dctrl[6 + i] -= (T[i] - tau_a[i]) / AW_TAU
            if dctrl[6 + i] * (T[i] - tau_a[i]) > 0.0:
                dctrl[9 + i] = 0.0

    tele[0:3] = xi1
    tele[3:6] = V - Vd
    tele[6:9] = xi3
    tele[9:12] = Om - Om_d
    tele[12:15] = eta1
    tele[15:18] = eta2
    tele[18:21] = xi2
    tele[21:24] = xi4
    tele[24:27] = w_d
    tele[27:30] = Om_d
    tele[30] = F_T
    tele[31:34] = T
    tele[34] = 1.0 if sat else 0.0
    tele[35] = 1.0 if ok else 0.0
    tele[36:40] = u_c
    return u_c, dctrl, tele


def initial_loop_states(g: Gains, p_nominal: PlantParams, r: ReferenceSample | None = None
                        ) -> tuple[LoopState, LoopState]:
    """Loop states at the start of a run.

    The position command starts at the feedforward specific force
    ``Ad + g e3`` of the reference (``g e3`` when ``r`` is None), the
    attitude command at zero and both adaptive gains at ``lambda0``.
    """
    lam0 = np.full(3, g.lambda0)
    Ad = np.zeros(3) if r is None else r.Ad
    pos = LoopState(Ad + np.array([0.0, 0.0, p_nominal.g]), lam0)
    att = LoopState(np.zeros(3), lam0)
    return pos, att


def _command_reference(r: ReferenceSample, F, Fdot, g: Gains, grav: float) -> tuple[ReferenceSample, float]:
    """Copy of ``r`` whose attitude fields follow the position command ``F``.

    Also returns the thrust scale (specific thrust) of the command.
    """
    Fc, Fcd, _ = _tilt_envelope(np.asarray(F, dtype=np.float64), np.asarray(Fdot, dtype=np.float64),
                                g.max_tilt, grav)
    phi, theta, sc, _exact, ok = _flatness_solve(Fc, r.psi_d)
    if not ok:
        raise SingularReference(f"position command {F} has no realising attitude")
    phid, thetad, _ = _flatness_rates(phi, theta, r.psi_d, sc, Fcd, r.psi_d_dot)
    rr = replace(r, w_d=np.array([phi, theta, r.psi_d]), Omega_d=np.array([phid, thetad, r.psi_d_dot]))
    return rr, float(sc), Fc


def _bleed(old: LoopState, new: LoopState, target, tau_aw: float, dt: float) -> LoopState:
    """Back-calculation on one Euler step from ``old`` to ``new``.

    The integrator is pulled towards ``target`` with time constant ``tau_aw``
    and each adaptive gain is held where the integrator still moves away from it.
    """
    gap = old.u_int - np.asarray(target, dtype=np.float64)
    rate = (new.u_int - old.u_int) / dt - gap / tau_aw
    lam = np.where(rate * gap > 0.0, old.lambda_hat, new.lambda_hat)
    return LoopState(old.u_int + dt * rate, lam, new.xi_prev)


def controller_step(s: QuadState, r: ReferenceSample, pos: LoopState, att: LoopState, g: Gains,
                    dt: float, mode: str = "adaptive", p_nominal: PlantParams | None = None):
    """One discrete controller update (explicit Euler on the control ODEs).

    Returns ``(u_c, pos', att', telemetry)``.  Auxiliary errors use a
    backward difference over ``dt``.  In ``baseline`` mode the adaptive gains
    are held fixed.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    p = p_nominal or PlantParams()
    gm = g.for_mode(mode)

    e_pos = position_errors(s, r, gm, pos, dt)
    Fdot = control_rate(e_pos.eta, pos.u_int, pos.lambda_hat, gm, "position")
    pos_new = LoopState(pos.u_int + dt * Fdot,
                        pos.lambda_hat + dt * adapt_rate(e_pos.eta, gm, "position"),
                        e_pos.xi_b)

    rr, sc, Fc = _command_reference(r, pos_new.u_int, Fdot, gm, p.g)
    F_T = p.m * sc
    if np.any(Fc != pos_new.u_int):
        pos_new = _bleed(pos, pos_new, Fc, AW_TAU_F, dt)

    e_att = attitude_errors(s, rr, gm, att, dt)
    Tdot = control_rate(e_att.eta, att.u_int, att.lambda_hat, gm, "attitude")
    att_new = LoopState(att.u_int + dt * Tdot,
                        att.lambda_hat + dt * adapt_rate(e_att.eta, gm, "attitude"),
                        e_att.xi_b)

    tau = att_new.u_int.copy()
    u_c, sat = allocate(F_T, tau, p, return_saturation=True)
    if sat:
        att_new = _bleed(att, att_new, mix_torques(u_c, p)[1], AW_TAU, dt)
    telemetry = {
        "position": e_pos, "attitude": e_att, "w_d": rr.w_d, "Omega_d": rr.Omega_d,
        "F_T": F_T, "tau": tau, "saturated": sat,
    }
    return u_c, pos_new, att_new, telemetry
