"""Paired adaptive/baseline comparisons, uncertainty sweeps and artifact emission."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import MetricsRow, failed_row, metrics_csv, metrics_table, rms_metrics
from .config import Scenario, dump_scenario, params_hash, perturb_params
from .controller import MODES
from .integrator import ChartViolationError, RunLog, SimulationError, simulate

__all__ = ["CompareResult", "DEFAULT_LEVELS", "perturb_params", "run_compare", "run_sweep",
           "write_compare", "write_run", "write_sweep"]

log = logging.getLogger(__name__)

DEFAULT_LEVELS = (-0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15)


@dataclass
class CompareResult:
    adaptive: RunLog
    baseline: RunLog
    rows: list[MetricsRow]

    def logs(self) -> dict[str, RunLog]:
        return {"adaptive": self.adaptive, "baseline": self.baseline}


def _run_mode(scenario: Scenario, mode: str, p_true) -> RunLog:
    try:
        return simulate(scenario, mode, p_true=p_true)
    except SimulationError as exc:
        raise type(exc)(f"[{mode}] {exc}", exc.status, exc.t, exc.log) from exc


def run_compare(scenario: Scenario, window: tuple[float, float] | None = None) -> CompareResult:
    """Run ``scenario`` in both modes against one true-parameter realisation."""
    p_true = scenario.true_params()
    logs = {m: _run_mode(scenario, m, p_true) for m in MODES}
    assert logs["adaptive"].meta["p_true_hash"] == logs["baseline"].meta["p_true_hash"]
    rows = [rms_metrics(logs[m], window) for m in MODES]
    return CompareResult(logs["adaptive"], logs["baseline"], rows)


def _sweep_cell(args) -> MetricsRow:
    scenario, mode, window = args
    p_true = scenario.true_params()
    try:
        return rms_metrics(simulate(scenario, mode, p_true=p_true), window)
    except SimulationError as exc:
        log.warning("sweep cell level=%+.3f mode=%s failed: %s", scenario.uncertainty_level, mode, exc)
        return failed_row(scenario.uncertainty_level, mode, scenario.seed, params_hash(p_true),
                          "chart" if isinstance(exc, ChartViolationError) else "diverged")


def run_sweep(base: Scenario, levels=DEFAULT_LEVELS, seeds=None, workers: int | None = None,
              window: tuple[float, float] | None = None) -> list[MetricsRow]:
    """Both modes at every level; rows ordered by level, adaptive first.

    ``seeds`` gives one seed per level (default: ``base.seed`` everywhere), so
    the two modes of a level share their true parameters.  A diverged cell
    becomes a row with NaN metrics and the sweep carries on.  ``workers=1``
    runs in-process; otherwise cells go to a process pool.
    """
    levels = [float(v) for v in levels]
    if not levels:
        raise ValueError("sweep needs at least one uncertainty level")
    if seeds is None:
        seeds = [base.seed] * len(levels)
    seeds = [int(s) for s in seeds]
    if len(seeds) != len(levels):
        raise ValueError("need exactly one seed per level")
    cells = [(base.replace(uncertainty_level=lv, seed=sd), m, window)
             for lv, sd in zip(levels, seeds) for m in MODES]
    if workers == 1 or len(cells) == 1:
        return [_sweep_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_cell, cells))


def _plot_data(logs: dict[str, RunLog]) -> dict[str, str]:
    """Plot-data CSVs: position tracking and adaptive gains per mode."""
    out = {}
    first = next(iter(logs.values()))
    Pd = first.P - first.xi1
    cols = {"t": first.t, "x_d": Pd[:, 0], "y_d": Pd[:, 1], "z_d": Pd[:, 2]}
    for mode, lg in logs.items():
        for i, ax in enumerate("xyz"):
            cols[f"{ax}_{mode}"] = lg.P[:, i]
    out["fig_position.csv"] = _columns_csv(cols)
    cols = {"t": first.t}
    for mode, lg in logs.items():
        for name in ("lambda1", "lambda2"):
            arr = getattr(lg, name)
            for i in range(3):
                cols[f"{name}_{i + 1}_{mode}"] = arr[:, i]
    out["fig_gains.csv"] = _columns_csv(cols)
    return out


def _columns_csv(cols: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*cols.values()):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _write(out: Path, files: dict[str, str]) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    return paths


def write_run(runlog: RunLog, scenario: Scenario, out: str | Path,
              window: tuple[float, float] | None = None) -> list[Path]:
    row = rms_metrics(runlog, window)
    return _write(Path(out), {
        f"run_{runlog.mode}.csv": runlog.to_csv(),
        "metrics.csv": metrics_csv([row]),
        "metrics.txt": metrics_table([row]),
        "scenario.yaml": dump_scenario(scenario),
    })


def write_compare(result: CompareResult, scenario: Scenario, out: str | Path,
                  plot: bool = False) -> list[Path]:
    files = {f"run_{m}.csv": lg.to_csv() for m, lg in result.logs().items()}
    files["metrics.csv"] = metrics_csv(result.rows)
    files["metrics.txt"] = metrics_table(result.rows)
    files["scenario.yaml"] = dump_scenario(scenario)
    files.update(_plot_data(result.logs()))
    paths = _write(Path(out), files)
    if plot:
        paths += _render_compare(result, Path(out))
    return paths


def write_sweep(rows: list[MetricsRow], scenario: Scenario, out: str | Path,
                plot: bool = False) -> list[Path]:
    paths = _write(Path(out), {"sweep_bars.csv": metrics_csv(rows),
                               "sweep.txt": metrics_table(rows),
                               "scenario.yaml": dump_scenario(scenario)})
    if plot:
        paths += _render_sweep(rows, Path(out))
    return paths


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _render_compare(result: CompareResult, out: Path) -> list[Path]:
    plt = _pyplot()
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 7))
    lg = result.adaptive
    Pd = lg.P - lg.xi1
    for i, (ax, name) in enumerate(zip(axes, "xyz")):
        ax.plot(lg.t, Pd[:, i], "k--", lw=1, label="reference")
        for mode, run in result.logs().items():
            ax.plot(run.t, run.P[:, i], lw=1, label=mode)
        ax.set_ylabel(f"{name} [m]")
    axes[0].legend(loc="upper right")
    axes[-1].set_xlabel("t [s]")
    path = out / "fig_position.svg"
    fig.savefig(path)
    plt.close(fig)
    return [path]


def _render_sweep(rows: list[MetricsRow], out: Path) -> list[Path]:
    plt = _pyplot()
    levels = sorted({r.uncertainty_level for r in rows})
    fig, axes = plt.subplots(1, 4, figsize=(12, 3))
    x = np.arange(len(levels))
    for k, (ax, name) in enumerate(zip(axes, ("P", "V", "w", "Omega"))):
        for j, mode in enumerate(MODES):
            vals = [next((r.values[k] for r in rows
                          if r.mode == mode and r.uncertainty_level == lv), np.nan) for lv in levels]
            ax.bar(x + (j - 0.5) * 0.4, vals, width=0.4, label=mode)
        ax.set_xticks(x, [f"{100 * lv:+.0f}%" for lv in levels], rotation=45)
        ax.set_title(f"RMS {name}")
    axes[0].legend()
    fig.tight_layout()
    path = out / "sweep_bars.svg"
    fig.savefig(path)
    plt.close(fig)
    return [path]
