"""Scenario definition, YAML configuration and parameter perturbation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .params import ConfigError, DisturbanceSpec, Gains, PlantParams, _checked_kwargs
from .trajectory import TrajectorySpec

UNCERTAINTY_ENVELOPE = 0.15

# coefficients scaled by perturb_params, in draw order; g and u_max are not uncertain
PERTURBED_FIELDS = ("m", "I", "Kd", "Ka", "K_T", "K_D", "l", "I_r", "k_tau")


def perturb_params(p_nominal: PlantParams, level: float, seed: int = 0) -> PlantParams:
    """True plant parameters deviating from ``p_nominal`` by ``level``.

    Every coefficient (each inertia, drag and friction component separately)
    is multiplied by ``1 + level * s_i`` with ``s_i`` in {-1, +1} drawn from a
    generator seeded by ``seed``.  The same seed gives the same signs for any
    level, so ``-level`` mirrors ``+level``.
    """
    if not -1.0 <= level <= 1.0:
        raise ConfigError(f"uncertainty level must lie in [-1, 1], got {level}")
    n = sum(np.size(getattr(p_nominal, f)) for f in PERTURBED_FIELDS)
    signs = np.random.default_rng(seed).choice(np.array([-1.0, 1.0]), size=n)
    changes: dict[str, Any] = {}
    i = 0
    for name in PERTURBED_FIELDS:
        val = np.asarray(getattr(p_nominal, name), dtype=float)
        k = val.size
        scaled = val * (1.0 + level * signs[i:i + k].reshape(val.shape))
        i += k
        if np.any(scaled <= 0):
            raise ConfigError(f"perturbation level {level} makes {name} non-positive")
        changes[name] = tuple(scaled) if val.ndim else float(scaled)
    return dataclasses.replace(p_nominal, **changes)


def params_hash(p: PlantParams) -> str:
    """Short digest identifying a parameter realisation."""
    blob = json.dumps(p.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one closed-loop run.

    ``initial_offset`` is added to the reference position at t=0 and body
    rates start at zero.  With ``match_reference_velocity`` the velocity and
    attitude start trimmed to the reference; otherwise the vehicle starts at
    rest and level (yaw on the reference).  ``|uncertainty_level|`` above 0.15 is
    rejected unless ``allow_large_uncertainty`` is set.
    """

    plant: PlantParams = field(default_factory=PlantParams)
    gains: Gains = field(default_factory=Gains)
    disturbance: DisturbanceSpec = field(default_factory=lambda: DisturbanceSpec(magnitude=5.0))
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    uncertainty_level: float = 0.10
    seed: int = 0
    dt: float = 1e-3
    horizon: float = 40.0
    mode: str = "adaptive"
    initial_offset: tuple[float, float, float] = (0.5, -0.5, 0.2)
    match_reference_velocity: bool = True
    max_position: float = 1e3
    max_rate: float = 1e3
    allow_large_uncertainty: bool = False

    def __post_init__(self):
        off = np.asarray(self.initial_offset, dtype=float).reshape(-1)
        if off.size != 3:
            raise ConfigError("initial_offset must have 3 components")
        object.__setattr__(self, "initial_offset", tuple(float(v) for v in off))
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("adaptive", "baseline"):
            raise ConfigError(f"mode must be 'adaptive' or 'baseline', got {self.mode!r}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError("dt must be > 0")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ConfigError("horizon must be > 0")
        if abs(self.uncertainty_level) > UNCERTAINTY_ENVELOPE and not self.allow_large_uncertainty:
            raise ConfigError(
                f"|uncertainty_level|={abs(self.uncertainty_level)} exceeds {UNCERTAINTY_ENVELOPE}; "
                "set allow_large_uncertainty to override"
            )
        if not -1.0 <= self.uncertainty_level <= 1.0:
            raise ConfigError("uncertainty_level must lie in [-1, 1]")
        if self.max_position <= 0 or self.max_rate <= 0:
            raise ConfigError("divergence bounds must be > 0")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @property
    def n_steps(self) -> int:
        n = int(round(self.horizon / self.dt))
        if abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ConfigError(f"horizon {self.horizon} is not a whole number of steps of {self.dt}")
        return n

    def true_params(self) -> PlantParams:
        return perturb_params(self.plant, self.uncertainty_level, self.seed)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "plant": self.plant.to_dict(),
            "gains": self.gains.to_dict(),
            "disturbance": self.disturbance.to_dict(),
            "trajectory": self.trajectory.to_dict(),
        }
        for f in dataclasses.fields(self):
            if f.name not in out:
                v = getattr(self, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        data = dict(data or {})
        kw = _checked_kwargs(cls, data, "scenario")
        sections = {"plant": PlantParams, "gains": Gains, "disturbance": DisturbanceSpec,
                    "trajectory": TrajectorySpec}
        for key, typ in sections.items():
            if key in kw:
                val = kw[key]
                if val is None:
                    val = {}
                if not isinstance(val, Mapping):
                    raise ConfigError(f"[{key}] must be a mapping")
                kw[key] = typ.from_dict(val)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_scenario(path: str | Path | None = None, **overrides) -> Scenario:
    """Read a YAML scenario file (every key optional) and apply ``overrides``.

    ``None`` overrides are ignored, so CLI flags can be passed straight through.
    """
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = dict(loaded)
    scenario = Scenario.from_dict(data)
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        try:
            scenario = scenario.replace(**changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
    return scenario


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False)
