import dataclasses

import numpy as np
import pytest

from mrise import DisturbanceSpec, PlantParams, Scenario, run_compare, run_sweep
from mrise.analysis import metrics_csv
from mrise.cli import main
from mrise.config import PERTURBED_FIELDS, dump_scenario, load_scenario, perturb_params
from mrise.params import ConfigError

P = PlantParams()
SHORT = Scenario(horizon=2.0)


def _flat(p):
    return np.concatenate([np.atleast_1d(np.asarray(getattr(p, f), float)) for f in PERTURBED_FIELDS])


def test_perturb_level_zero_is_identity():
    assert perturb_params(P, 0.0, seed=3) == P


def test_perturb_magnitude_and_mirror():
    ratio = _flat(perturb_params(P, 0.10, seed=5)) / _flat(P)
    np.testing.assert_allclose(np.abs(ratio - 1.0), 0.10, rtol=1e-12)
    mirror = _flat(perturb_params(P, -0.10, seed=5)) / _flat(P)
    np.testing.assert_allclose(mirror - 1.0, -(ratio - 1.0), rtol=1e-12)


def test_perturb_seeded():
    assert perturb_params(P, 0.05, seed=11) == perturb_params(P, 0.05, seed=11)
    assert perturb_params(P, 0.05, seed=11) != perturb_params(P, 0.05, seed=12)
    with pytest.raises(ConfigError):
        perturb_params(P, 1.5)


def test_uncertainty_envelope():
    with pytest.raises(ConfigError):
        Scenario(uncertainty_level=0.2)
    Scenario(uncertainty_level=0.2, allow_large_uncertainty=True)


def test_config_rejects_unknown_keys(tmp_path):
    for text in ("horizn: 3\n", "gains:\n  k9: 1\n", "plant:\n  mass: 1\n"):
        f = tmp_path / "c.yaml"
        f.write_text(text)
        with pytest.raises(ConfigError):
            load_scenario(f)


def test_config_round_trip(tmp_path):
    sc = Scenario(seed=4, uncertainty_level=-0.05, disturbance=DisturbanceSpec(magnitude=2.0))
    f = tmp_path / "s.yaml"
    f.write_text(dump_scenario(sc))
    assert load_scenario(f) == sc
    assert load_scenario(f, seed=9, horizon=None).seed == 9


def test_compare_shares_true_parameters():
    res = run_compare(SHORT)
    assert res.adaptive.meta["p_true_hash"] == res.baseline.meta["p_true_hash"]
    assert [r.mode for r in res.rows] == ["adaptive", "baseline"]


def test_baseline_gains_constant_adaptive_monotone():
    res = run_compare(SHORT.replace(gains=dataclasses.replace(SHORT.gains, lambda0=0.2)))
    for lam in (res.baseline.lambda1, res.baseline.lambda2):
        np.testing.assert_array_equal(lam, 0.2)
    for lam in (res.adaptive.lambda1, res.adaptive.lambda2):
        assert np.all(np.diff(lam, axis=0) >= 0)
        assert np.all(lam[-1] > 0.2)


def test_nominal_modes_nearly_agree():
    sc = SHORT.replace(uncertainty_level=0.0, disturbance=DisturbanceSpec(magnitude=0.0))
    ad, bl = run_compare(sc).rows
    np.testing.assert_allclose(ad.values, bl.values, rtol=0.05)


def test_single_level_sweep_equals_compare():
    rows = run_sweep(SHORT, levels=[0.0], workers=1)
    cmp = run_compare(SHORT.replace(uncertainty_level=0.0)).rows
    assert rows == cmp


def test_sweep_shape_order_and_reproducibility():
    levels = (-0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15)
    a = run_sweep(SHORT.replace(horizon=0.5), levels, workers=2)
    assert len(a) == 14
    assert [(r.uncertainty_level, r.mode) for r in a] == [(lv, m) for lv in levels
                                                          for m in ("adaptive", "baseline")]
    b = run_sweep(SHORT.replace(horizon=0.5), levels, workers=1)
    assert metrics_csv(a) == metrics_csv(b)


def test_sweep_marks_diverged_cells():
    rows = run_sweep(SHORT.replace(max_position=0.1), levels=[0.0], workers=1)
    assert [r.status for r in rows] == ["diverged", "diverged"]
    assert all(np.isnan(v) for r in rows for v in r.values)


def test_sweep_argument_errors():
    with pytest.raises(ValueError):
        run_sweep(SHORT, levels=[])
    with pytest.raises(ValueError):
        run_sweep(SHORT, levels=[0.0, 0.1], seeds=[1])


def _cfg(tmp_path, text="horizon: 0.5\n"):
    f = tmp_path / "cfg.yaml"
    f.write_text(text)
    return f


def test_cli_simulate_writes_only_under_out(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(_cfg(tmp_path)), "--out", str(out), "--mode", "baseline"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cfg.yaml", "out"]
    assert {"run_baseline.csv", "metrics.csv", "scenario.yaml"} <= {p.name for p in out.iterdir()}


def test_cli_compare_and_sweep(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    names = {p.name for p in (tmp_path / "c").iterdir()}
    assert {"run_adaptive.csv", "run_baseline.csv", "fig_position.csv", "fig_gains.csv"} <= names
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--levels", "0", "0.05",
                 "--workers", "1"]) == 0
    assert (tmp_path / "s" / "sweep_bars.csv").read_text().count("\n") == 5


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--config", str(_cfg(tmp_path, "horizn: 1\n")), "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--level", "0.2", "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(_cfg(tmp_path, "horizon: 1\nmax_position: 0.1\n")),
                 "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--config", str(_cfg(tmp_path, "horizon: 0.5\nmax_position: 0.1\n")),
                 "--out", str(tmp_path / "s"), "--levels", "0", "--workers", "1"]) == 2
    assert "diverged" in capsys.readouterr().err


def test_cli_check_gains(tmp_path, capsys):
    assert main(["check-gains"]) == 0
    assert "c1 = 1" in capsys.readouterr().out
    bad = _cfg(tmp_path, "gains:\n  k3: 0.4\n")
    assert main(["check-gains", "--config", str(bad), "--out", str(tmp_path / "g")]) == 1
    assert "k3 > 1/2" in (tmp_path / "g" / "gains.txt").read_text()
    assert main(["check-gains", "--delta1", "0.5"]) == 1
