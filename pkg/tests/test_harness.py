import io
import math

import numpy as np
import pytest

from hmmdetect.detectors import DetectorConfig
from hmmdetect.exceptions import EstimationError
from hmmdetect.harness import (calibrate_threshold, compare_rules, estimate_arl, estimate_delay,
                               martingale_check, run_trials)
from hmmdetect.hmm import ChangeScenario


def test_arl_identical_models_is_ceil_b(shift_pair):
    pre = shift_pair[0]
    est = estimate_arl(pre, pre, DetectorConfig("srp", math.log(7.5)), 300, seed=1)
    assert est.mean == 8 and est.std_error == 0 and est.censored == 0


def test_delay_accounting(shift_pair):
    pre = shift_pair[0]
    cfg = DetectorConfig("srp", math.log(7.5))
    est = estimate_delay(ChangeScenario(pre, pre, 5), cfg, 100, seed=1)
    assert est.mean == 3 and est.included == 100 and est.excluded == 0
    with pytest.raises(EstimationError, match="100 early"):
        estimate_delay(ChangeScenario(pre, pre, 10), cfg, 100, seed=1)


def test_censored_trials_enter_at_cap(shift_pair):
    est = estimate_arl(*shift_pair, DetectorConfig("srp", math.log(50)), 500, seed=2, cap=20)
    assert est.censored > 0 and est.lower_bound
    assert est.mean <= 20
    assert est.censored + est.included == est.trials


def test_thread_count_does_not_change_results(two_state):
    sc = ChangeScenario(*two_state)
    cfg = DetectorConfig("cusum", 2.5)
    a = run_trials(sc, cfg, 5000, 3, 10_000, threads=1)
    b = run_trials(sc, cfg, 5000, 3, 10_000, threads=4)
    np.testing.assert_array_equal(a.stop, b.stop)
    np.testing.assert_array_equal(a.final_stat, b.final_stat)


def test_trial_outcome_independent_of_batch(two_state):
    sc = ChangeScenario(*two_state, omega=3)
    cfg = DetectorConfig("srp", 3.0)
    full = run_trials(sc, cfg, 50, 8, 10_000)
    from hmmdetect.detectors import simulate_stopping
    part = simulate_stopping(sc, cfg, [17, 31], 8, 10_000)
    np.testing.assert_array_equal(part.stop, full.stop[[17, 31]])
    np.testing.assert_array_equal(part.final_stat, full.final_stat[[17, 31]])


def test_martingale_small(shift_pair):
    est = martingale_check(*shift_pair, math.log(50), 3000, seed=4, cap=200)
    assert abs(est.mean) <= 4 * est.std_error


def test_calibration_monotone(shift_pair):
    lo = calibrate_threshold(*shift_pair, "srp", 40, 1500, seed=5)
    hi = calibrate_threshold(*shift_pair, "srp", 120, 1500, seed=5)
    assert lo.converged and hi.converged
    assert abs(lo.arl.mean / 40 - 1) <= 0.05
    assert hi.log_b > lo.log_b


def test_compare_rules_table(shift_pair):
    sc = {"shift": ChangeScenario(*shift_pair)}
    table = compare_rules(sc, ["srp", "cusum"], 30, 800, seed=6, omegas=(1, 5))
    assert len(table.rows) == 6
    srp, cusum = table.delay("srp", 1), table.delay("cusum", 1)
    assert srp.mean > 0 and cusum.mean > 0
    buf = io.StringIO()
    table.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == list(table.COLUMNS) and len(lines) == 7
