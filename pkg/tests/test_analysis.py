import dataclasses

import numpy as np
import pytest

from mrise import Gains, Scenario, check_gains, lyapunov_surrogate, rms_metrics, simulate
from mrise.analysis import COLUMNS, MetricsRow, failed_row, metrics_csv, metrics_table
from mrise.controller import T_EOM, T_ETA1, T_ETA2, T_EV, T_XI1, T_XI2, T_XI3, T_XI4
from mrise.params import ConfigError

ALL_ERRORS = (T_XI1, T_XI2, T_XI3, T_XI4, T_ETA1, T_ETA2, T_EV, T_EOM)


@pytest.fixture(scope="module")
def short_log():
    return simulate(Scenario(horizon=0.5))


def _with_errors(runlog, *cols):
    """Copy of ``runlog`` with every error signal zeroed except the ``(slice, value)`` pairs."""
    tele = runlog.tele.copy()
    for c in ALL_ERRORS:
        tele[:, c] = 0.0
    for c, v in cols:
        tele[:, c] = v
    return dataclasses.replace(runlog, tele=tele)


def test_default_gain_constants():
    rep = check_gains(Gains())
    assert rep.passed
    assert (rep.c1, rep.c2) == (1.0, 2.0)
    assert rep.radius_bound == pytest.approx(2.0 * np.sqrt(2.0), rel=1e-15)


def test_gain_report_flags_failures():
    rep = check_gains({"k1": 0.4})
    assert not rep.passed and rep.failures == ["k1 > 1/2"]
    assert rep.margins["k1 > 1/2"] == pytest.approx(-0.1)
    assert "FAIL" in rep.to_text()
    rep = check_gains(Gains(), delta1=0.5)
    assert rep.failures == ["alpha_F >= delta1"]


def test_gain_check_c1_is_capped_at_one():
    assert check_gains({"k1": 10.0, "k2": 10.0, "k3": 10.0, "k4": 10.0}).c1 == 1.0
    assert check_gains({"k2": 0.75}).c1 == 0.25


def test_gain_check_rejects_bad_input():
    with pytest.raises(ConfigError):
        check_gains({"k5": 1.0})
    with pytest.raises(ConfigError):
        check_gains(Gains(), delta1=1.0)
    with pytest.raises(ConfigError):
        check_gains(Gains(), delta2=-0.1)


def test_surrogate_zero_for_perfect_tracking(short_log):
    s = lyapunov_surrogate(_with_errors(short_log))
    np.testing.assert_array_equal(s.V, 0.0)
    assert s.decreasing_fraction == 0.0


def test_surrogate_nonnegative_and_decreasing_for_decaying_errors(short_log):
    decay = np.exp(-short_log.t)[:, None] * np.ones(3)
    s = lyapunov_surrogate(_with_errors(short_log, (T_XI1, decay), (T_ETA2, decay)))
    assert np.all(s.V >= 0)
    assert s.decreasing_fraction == 1.0
    assert s.V[0] == pytest.approx(3.0, rel=1e-15)


def test_rms_zero_errors(short_log):
    row = rms_metrics(_with_errors(short_log))
    assert row.values == (0.0, 0.0, 0.0, 0.0)


def test_rms_single_axis_constant(short_log):
    e = np.array([0.3, 0.0, 0.0])
    row = rms_metrics(_with_errors(short_log, (T_XI1, e)))
    assert row.rms_P == pytest.approx(0.3 / np.sqrt(3.0), rel=1e-14)
    assert row.rms_V == 0.0


def test_rms_window_selection(short_log):
    err = np.where(short_log.t[:, None] < 0.25, 1.0, 0.0) * np.ones(3)
    runlog = _with_errors(short_log, (T_XI3, err))
    assert rms_metrics(runlog, (0.3, 0.5)).rms_w == 0.0
    assert rms_metrics(runlog, (0.0, 0.2)).rms_w == 1.0


def test_rms_time_translation_invariant(short_log):
    shifted = dataclasses.replace(short_log, t=short_log.t + 7.0)
    a, b = rms_metrics(short_log), rms_metrics(shifted)
    assert a.values == b.values
    assert rms_metrics(short_log, (0.1, 0.4)).values == rms_metrics(shifted, (7.1, 7.4)).values


def test_rms_bad_window(short_log):
    with pytest.raises(ValueError):
        rms_metrics(short_log, (0.4, 0.1))
    with pytest.raises(ValueError):
        rms_metrics(short_log, (10.0, 11.0))


def test_metrics_row_rejects_negative():
    with pytest.raises(ValueError):
        MetricsRow(0.0, "adaptive", -1.0, 0.0, 0.0, 0.0)
    assert np.isnan(failed_row(0.1, "baseline", 0, "", "diverged").rms_P)


def test_metrics_csv_and_table_round_trip():
    rows = [MetricsRow(0.1, "adaptive", 0.1, 0.2, 0.3, 0.4), MetricsRow(0.1, "baseline", 0.5, 0.6, 0.7, 0.8)]
    lines = metrics_csv(rows).splitlines()
    assert lines[0].split(",") == list(COLUMNS)
    assert lines[1].split(",")[:6] == ["0.1", "adaptive", "0.1", "0.2", "0.3", "0.4"]
    table = metrics_table(rows).splitlines()
    assert len(table) == 3 and "baseline" in table[2]


@pytest.mark.slow
def test_adaptive_beats_baseline_at_ten_percent(default_compare):
    _, result = default_compare
    ad, bl = result.rows
    assert ad.mode == "adaptive" and bl.mode == "baseline"
    assert all(a < b for a, b in zip(ad.values, bl.values))
