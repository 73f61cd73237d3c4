"""Parameter containers and their packed-array forms.

The dataclasses here are what users configure.  The compiled simulation
kernel only sees flat ``float64`` arrays, so every container knows how to
pack itself; the ``P_*`` and ``G_*`` index constants document the layout.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

GRAVITY = 9.81


class ConfigError(ValueError):
    """Invalid parameter values or unknown configuration keys."""


def _vec3(value, name: str) -> tuple[float, float, float]:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.repeat(arr, 3)
    if arr.size != 3:
        raise ConfigError(f"{name} must have 3 components, got {arr.size}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the quadrotor.

    Defaults are representative values for a ~1 kg airframe.  ``u_max`` is the rotor speed
    ceiling used when clamping motor commands.
    """

    m: float = 1.0
    I: tuple[float, float, float] = (0.01, 0.01, 0.02)
    Kd: tuple[float, float, float] = (0.1, 0.1, 0.1)
    Ka: tuple[float, float, float] = (1e-4, 1e-4, 1e-4)
    K_T: float = 1e-5
    K_D: float = 3e-7
    l: float = 0.2
    I_r: float = 5e-5
    k_tau: float = 5e-3
    g: float = GRAVITY
    u_max: float = 1500.0

    def __post_init__(self):
        for name in ("I", "Kd", "Ka"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            vals = np.atleast_1d(np.asarray(getattr(self, f.name), dtype=float))
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                raise ConfigError(f"PlantParams.{f.name} must be finite and > 0, got {getattr(self, f.name)}")

    @property
    def inertia(self) -> np.ndarray:
        return np.diag(self.I)

    @property
    def motor_time_constant(self) -> float:
        return self.I_r / self.k_tau

    def hover_speed(self) -> float:
        return float(np.sqrt(self.m * self.g / (4.0 * self.K_T)))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.m, *self.I, *self.Kd, *self.Ka, self.K_T, self.K_D, self.l,
             self.I_r, self.k_tau, self.g, self.u_max],
            dtype=np.float64,
        )

    def replace(self, **changes) -> "PlantParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        for k in ("I", "Kd", "Ka"):
            out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PlantParams":
        return cls(**_checked_kwargs(cls, data, "plant"))


# packed layout of PlantParams.as_array()
P_M, P_I, P_KD, P_KA = 0, slice(1, 4), slice(4, 7), slice(7, 10)
P_KT, P_KDRAG, P_L, P_IR, P_KTAU, P_G, P_UMAX = 10, 11, 12, 13, 14, 15, 16


@dataclass(frozen=True)
class Gains:
    """Controller gains.

    ``alpha_F, alpha1, k1, k2`` (position loop) and ``alpha_tau, alpha2, k3, k4``
    (attitude loop) default to the reference gain set.  ``beta1``,
    ``beta2`` and ``kappa_s`` are our own choices; ``kappa_s = inf`` selects
    the exact signum.  ``tau_f`` is the time constant of the filter that
    differentiates the desired body rates inside the continuous-time loop.
    ``lambda0`` is the initial (and, in baseline mode, permanent) value of the
    adaptive feedback gains.  ``max_tilt`` bounds the angle between the
    commanded specific force and the vertical before it reaches the flatness
    map; the integrated command itself is not clipped.
    """

    k1: float = 5.0
    k2: float = 2.5
    k3: float = 20.0
    k4: float = 9.0
    alpha_F: float = 0.01
    alpha_tau: float = 0.01
    alpha1: float = 2.0
    alpha2: float = 5.0
    beta1: float = 0.03
    beta2: float = 2.0
    kappa_s: float = 10.0
    tau_f: float = 0.01
    lambda0: float = 0.0
    max_tilt: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = float(getattr(self, f.name))
            if np.isnan(v):
                raise ConfigError(f"Gains.{f.name} is NaN")
        for name in ("k1", "k2", "k3", "k4"):
            if getattr(self, name) <= 0.5:
                raise ConfigError(f"Gains.{name} must exceed 1/2, got {getattr(self, name)}")
        for name in ("alpha_F", "alpha_tau", "alpha1", "alpha2", "kappa_s", "tau_f"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"Gains.{name} must be > 0, got {getattr(self, name)}")
        if not 0 < self.max_tilt < 0.5 * np.pi:
            raise ConfigError(f"Gains.max_tilt must lie in (0, pi/2), got {self.max_tilt}")
        for name in ("beta1", "beta2", "lambda0"):
            if getattr(self, name) < 0:
                raise ConfigError(f"Gains.{name} must be >= 0, got {getattr(self, name)}")

    def for_mode(self, mode: str) -> "Gains":
        """Gains actually used in ``mode``: baseline freezes adaptation."""
        if mode == "adaptive":
            return self
        if mode == "baseline":
            return dataclasses.replace(self, beta1=0.0, beta2=0.0)
        raise ConfigError(f"unknown mode {mode!r}; expected 'adaptive' or 'baseline'")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in dataclasses.fields(self)], dtype=np.float64)

    def replace(self, **changes) -> "Gains":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Gains":
        return cls(**_checked_kwargs(cls, data, "gains"))


(G_K1, G_K2, G_K3, G_K4, G_AF, G_ATAU, G_A1, G_A2,
 G_B1, G_B2, G_KAPPA, G_TAUF, G_LAM0, G_TILT) = range(14)

SHAPES = ("step", "sinusoid")


@dataclass(frozen=True)
class DisturbanceSpec:
    """External force/torque disturbance switched on at ``onset_time``.

    The same ``magnitude`` drives both channels, on every axis:
    ``d1 = magnitude * force_gain`` [N] and ``d2 = magnitude * torque_gain``
    [N m].  A sinusoid is ``magnitude * sin(frequency * (t - onset_time))``.
    The default ``torque_gain`` keeps the rotational disturbance inside the
    torque authority of the default airframe.
    """

    onset_time: float = 15.0
    magnitude: float = 0.0
    shape: str = "step"
    frequency: float = 1.0
    force_gain: float = 0.05
    torque_gain: float = 0.01

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"disturbance shape must be one of {SHAPES}, got {self.shape!r}")
        if self.magnitude < 0 or self.onset_time < 0:
            raise ConfigError("disturbance magnitude and onset_time must be >= 0")
        if self.force_gain < 0 or self.torque_gain < 0 or self.frequency < 0:
            raise ConfigError("disturbance gains and frequency must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.onset_time, self.magnitude, float(SHAPES.index(self.shape)),
             self.frequency, self.force_gain, self.torque_gain],
            dtype=np.float64,
        )

    def evaluate(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(d1, d2)`` at time ``t``."""
        from .dynamics import _disturbance

        d1, d2 = _disturbance(float(t), self.as_array())
        return d1, d2

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DisturbanceSpec":
        return cls(**_checked_kwargs(cls, data, "disturbance"))


def _checked_kwargs(cls, data: Mapping[str, Any], section: str) -> dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return dict(data)
