"""Command-line front end: ``mrise simulate|compare|sweep|check-gains``.

Exit codes: 0 success, 1 validation error (bad config or failed gain check),
2 simulation divergence.  Files are written only under ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .analysis import check_gains, metrics_table
from .config import load_scenario
from .harness import DEFAULT_LEVELS, run_compare, run_sweep, write_compare, write_run, write_sweep
from .integrator import SimulationError, simulate
from .params import ConfigError

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="YAML scenario file (every key optional)")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="perturbation seed")
    p.add_argument("--level", type=float, help="uncertainty level, e.g. 0.1 for 10%%")
    p.add_argument("--dt", type=float, help="step size [s]")
    p.add_argument("--horizon", type=float, help="run length [s]")
    p.add_argument("--window", type=float, nargs=2, metavar=("T0", "T1"),
                   help="metrics window [s] (default: whole run)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrise", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one closed-loop run")
    _common(p)
    p.add_argument("--mode", choices=("adaptive", "baseline"))

    p = sub.add_parser("compare", help="paired adaptive and baseline runs")
    _common(p)
    p.add_argument("--plot", action="store_true", help="also render SVG figures (needs matplotlib)")

    p = sub.add_parser("sweep", help="uncertainty sweep over both modes")
    _common(p)
    p.add_argument("--levels", type=float, nargs="+", default=list(DEFAULT_LEVELS))
    p.add_argument("--workers", type=int, default=None, help="process-pool size (1 = serial)")
    p.add_argument("--plot", action="store_true", help="also render the bar graph (needs matplotlib)")

    p = sub.add_parser("check-gains", help="verify the gain conditions")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, help="optional directory for gains.txt")
    p.add_argument("--delta1", type=float, default=0.0)
    p.add_argument("--delta2", type=float, default=0.0)
    return parser


def _scenario(args):
    return load_scenario(args.config, seed=args.seed, uncertainty_level=args.level,
                         dt=args.dt, horizon=args.horizon, mode=getattr(args, "mode", None))


def _raw_gains(path: Path | None) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    gains = data.get("gains") or {}
    if not isinstance(gains, dict):
        raise ConfigError("[gains] must be a mapping")
    return gains


def _cmd_simulate(args) -> int:
    sc = _scenario(args)
    runlog = simulate(sc)
    for path in write_run(runlog, sc, args.out, args.window):
        print(path)
    return EXIT_OK


def _cmd_compare(args) -> int:
    sc = _scenario(args)
    result = run_compare(sc, args.window)
    write_compare(result, sc, args.out, plot=args.plot)
    print(metrics_table(result.rows), end="")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    sc = _scenario(args)
    rows = run_sweep(sc, args.levels, workers=args.workers, window=args.window)
    write_sweep(rows, sc, args.out, plot=args.plot)
    print(metrics_table(rows), end="")
    return EXIT_OK if all(r.status == "ok" for r in rows) else EXIT_DIVERGED


def _cmd_check_gains(args) -> int:
    report = check_gains(_raw_gains(args.config), args.delta1, args.delta2)
    text = report.to_text()
    print(text, end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gains.txt").write_text(text)
    return EXIT_OK if report.passed else EXIT_INVALID


COMMANDS = {"simulate": _cmd_simulate, "compare": _cmd_compare, "sweep": _cmd_sweep,
            "check-gains": _cmd_check_gains}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
