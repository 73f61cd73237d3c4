"""Gain-condition checks, Lyapunov surrogate and grouped RMS metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, field, fields
from types import SimpleNamespace
from typing import Mapping

import numpy as np

from .integrator import RunLog
from .params import ConfigError, Gains

# error groups reported by rms_metrics: name -> RunLog attribute
GROUPS = {"P": "xi1", "V": "e_V", "w": "xi3", "Omega": "e_Omega"}


@dataclass(frozen=True)
class GainReport:
    """Verifiable part of the gain conditions.

    ``c1 = min(k1-1/2, k2-1/2, 1, k3-1/2, k4-1/2)`` and ``c2 = min(alpha1, alpha2)``;
    ``radius_bound = 2 sqrt(c1 c2)`` is the argument of the unknown bounding
    function that sets the region of attraction.  ``flags`` maps each checked
    condition to pass/fail and ``margins`` gives its slack (negative on failure).
    """

    c1: float
    c2: float
    radius_bound: float
    flags: dict[str, bool] = field(default_factory=dict)
    margins: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, ok in self.flags.items() if not ok]

    def to_text(self) -> str:
        lines = [f"c1 = {self.c1:g}", f"c2 = {self.c2:g}", f"2*sqrt(c1*c2) = {self.radius_bound:g}"]
        for name, ok in self.flags.items():
            lines.append(f"{name:<22} {'pass' if ok else 'FAIL'}  margin {self.margins[name]:+g}")
        lines.append("overall: " + ("pass" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def check_gains(g: Gains | Mapping[str, float], delta1: float = 0.0, delta2: float = 0.0) -> GainReport:
    """Check ``k_i > 1/2``, ``alpha_F >= delta1`` and ``alpha_tau >= delta2``.

    ``g`` may also be a mapping of gain values laid over the defaults; it is
    not validated, so gains that ``Gains`` would reject are reported instead.
    """
    if isinstance(g, Mapping):
        unknown = set(g) - set(Gains().to_dict())
        if unknown:
            raise ConfigError(f"unknown gain(s): {sorted(unknown)}")
        g = SimpleNamespace(**{**Gains().to_dict(), **{k: float(v) for k, v in g.items()}})
    for name, d in (("delta1", delta1), ("delta2", delta2)):
        if not 0.0 <= d < 1.0:
            raise ConfigError(f"{name} must lie in [0, 1), got {d}")
    margins: dict[str, float] = {}
    flags: dict[str, bool] = {}
    for k in ("k1", "k2", "k3", "k4"):
        name = f"{k} > 1/2"
        margins[name] = getattr(g, k) - 0.5
        flags[name] = margins[name] > 0
    for name, gain, d in (("alpha_F >= delta1", g.alpha_F, delta1),
                          ("alpha_tau >= delta2", g.alpha_tau, delta2)):
        margins[name] = gain - d
        flags[name] = gain >= d
    c1 = min(g.k1 - 0.5, g.k2 - 0.5, 1.0, g.k3 - 0.5, g.k4 - 0.5)
    c2 = min(g.alpha1, g.alpha2)
    bound = 2.0 * np.sqrt(c1 * c2) if c1 > 0 and c2 > 0 else float("nan")
    return GainReport(c1=c1, c2=c2, radius_bound=bound, flags=flags, margins=margins)


@dataclass(frozen=True)
class Surrogate:
    """Quadratic Lyapunov surrogate ``V_s(t)`` and its decrease statistics."""

    t: np.ndarray
    V: np.ndarray
    decreasing_fraction: float
    t_start: float


def lyapunov_surrogate(log: RunLog, t_start: float = 0.0) -> Surrogate:
    """``V_s = 1/2 (|xi1|^2 + |xi2|^2 + |xi3|^2 + |xi4|^2 + |eta1|^2 + |eta2|^2)``.

    ``decreasing_fraction`` counts steps ``k -> k+1`` with ``t_k >= t_start``
    where ``V_s`` strictly decreased.
    """
    V = 0.5 * sum(np.sum(getattr(log, a) ** 2, axis=1)
                  for a in ("xi1", "xi2", "xi3", "xi4", "eta1", "eta2"))
    sel = log.t[:-1] >= t_start
    dV = np.diff(V)[sel]
    frac = float(np.mean(dV < 0)) if dV.size else float("nan")
    return Surrogate(t=log.t, V=V, decreasing_fraction=frac, t_start=t_start)


@dataclass(frozen=True)
class MetricsRow:
    """Grouped RMS tracking errors of one run.

    Each group's RMS runs over every (component, step) pair in the window.
    A diverged run carries ``status`` other than ``"ok"`` and NaN metrics.
    """

    uncertainty_level: float
    mode: str
    rms_P: float
    rms_V: float
    rms_w: float
    rms_Omega: float
    seed: int = 0
    p_true_hash: str = ""
    status: str = "ok"

    def __post_init__(self):
        for v in self.values:
            if not (np.isnan(v) or v >= 0):
                raise ValueError("RMS values must be >= 0")

    @property
    def values(self) -> tuple[float, float, float, float]:
        return (self.rms_P, self.rms_V, self.rms_w, self.rms_Omega)


def grouped_rms(err: np.ndarray) -> float:
    err = np.asarray(err, dtype=float)
    return float(np.sqrt(np.mean(err ** 2)))


def rms_metrics(log: RunLog, window: tuple[float, float] | None = None) -> MetricsRow:
    """Grouped RMS errors of ``log`` over ``window`` (default: the whole run)."""
    sel = np.ones(len(log), dtype=bool)
    if window is not None:
        t0, t1 = window
        if not t0 < t1:
            raise ValueError(f"empty metrics window [{t0}, {t1}]")
        sel = (log.t >= t0 - 1e-12) & (log.t <= t1 + 1e-12)
    if not sel.any():
        raise ValueError("metrics window contains no samples")
    vals = {f"rms_{g}": grouped_rms(getattr(log, a)[sel]) for g, a in GROUPS.items()}
    meta = log.meta or {}
    status = "ok" if meta.get("status", 0) == 0 else "diverged"
    return MetricsRow(uncertainty_level=float(meta.get("uncertainty_level", 0.0)), mode=log.mode,
                      seed=int(meta.get("seed", 0)), p_true_hash=str(meta.get("p_true_hash", "")),
                      status=status, **vals)


def failed_row(level: float, mode: str, seed: int, p_true_hash: str, status: str) -> MetricsRow:
    nan = float("nan")
    return MetricsRow(level, mode, nan, nan, nan, nan, seed, p_true_hash, status)


COLUMNS = tuple(f.name for f in fields(MetricsRow))


def metrics_csv(rows) -> str:
    """Bar-graph data: one row per (level, mode)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(r)])
    return buf.getvalue()


def metrics_table(rows) -> str:
    """Aligned plain-text summary of ``rows``."""
    head = ("level", "mode", "rms_P", "rms_V", "rms_w", "rms_Omega", "status")
    body = [(f"{r.uncertainty_level:+.2f}", r.mode, *(f"{v:.6g}" for v in r.values), r.status)
            for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return "\n".join(fmt.format(*line) for line in (head, *body)) + "\n"
