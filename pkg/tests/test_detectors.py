import math

import numpy as np
import pytest

from hmmdetect.detectors import (CusumDetector, DetectorConfig, QuasiStationaryDist,
                                 ShiryaevDetector, SRPDetector, cusum_init, cusum_step,
                                 estimate_quasi_stationary, run_to_alarm, shiryaev_init,
                                 shiryaev_step, srp_init, srp_step)
from hmmdetect.exceptions import ValidationError
from hmmdetect.hmm import ChangeScenario, HmmParams
from hmmdetect.likelihood import log_lr_increments


def test_srp_first_step():
    s = srp_step(srp_init(math.log(10)), math.log(2))
    assert math.exp(s.log_r) == pytest.approx(2.0)
    assert not s.alarmed


@pytest.mark.parametrize("B, expected", [(10.0, 10), (10.5, 11), (3.0, 3)])
def test_srp_zero_increments_alarm_at_ceil(B, expected):
    s = srp_init(math.log(B))
    while not s.alarmed:
        s = srp_step(s, 0.0)
    assert s.n == expected


def test_srp_matches_classical_recursion():
    sig = np.random.default_rng(3).normal(-0.5, 1, size=500)
    s = srp_init(50.0)
    R = 0.0
    for x in sig:
        s = srp_step(s, x)
        R = (1 + R) * math.exp(x)
        assert s.log_r == pytest.approx(math.log(R), rel=1e-12)


def test_cusum_is_max_suffix_sum():
    sig = np.random.default_rng(5).normal(-0.2, 1, size=300)
    s = cusum_init(100.0)
    for n in range(1, len(sig) + 1):
        s = cusum_step(s, sig[n - 1])
        oracle = max(sig[k:n].sum() for k in range(n))
        assert s.g == pytest.approx(oracle, abs=1e-10)


def test_shiryaev_first_step_and_posterior():
    s = shiryaev_step(shiryaev_init(math.log(100), 0.1), 0.0)
    assert math.exp(s.log_r) == pytest.approx(1 / 0.9)
    # R = 1/p gives posterior one half
    s2 = shiryaev_step(shiryaev_init(math.log(100), 0.1), math.log(9.0))
    assert math.exp(s2.log_r) == pytest.approx(10.0)
    assert s2.posterior == pytest.approx(0.5)


def test_shiryaev_small_p_approaches_srp():
    sig = np.random.default_rng(1).normal(0.1, 1, size=200)
    a, b = srp_init(30.0), shiryaev_init(30.0, 1e-9)
    for x in sig:
        a, b = srp_step(a, x), shiryaev_step(b, x)
    assert b.log_r == pytest.approx(a.log_r, abs=1e-6)


def test_config_validation():
    with pytest.raises(ValidationError):
        DetectorConfig("srp", -1.0)
    with pytest.raises(ValidationError):
        DetectorConfig("shiryaev", 2.0, p=0.0)
    with pytest.raises(ValidationError):
        DetectorConfig("bogus", 2.0)


def test_config_round_trip():
    cfg = DetectorConfig("shiryaev", 4.0, p=0.05)
    assert DetectorConfig.from_dict(cfg.to_dict()) == cfg


def test_alarm_when_no_change_is_deterministic_for_identical_models(shift_pair):
    pre = shift_pair[0]
    rep = run_to_alarm(ChangeScenario(pre, pre), DetectorConfig("srp", math.log(7.5)), 100, 0)
    assert rep.stopping_time == 8 and not rep.censored


def test_estimators_match_state_machines(two_state):
    pre, post = two_state
    xs = np.random.default_rng(2).normal(0.5, 1.5, size=(3, 60))
    for det, init, step in [
            (SRPDetector(pre, post, log_b=4.0), lambda: srp_init(4.0), srp_step),
            (CusumDetector(pre, post, log_b=4.0), lambda: cusum_init(4.0), cusum_step),
            (ShiryaevDetector(pre, post, log_b=4.0, p=0.05), lambda: shiryaev_init(4.0, 0.05),
             shiryaev_step)]:
        det.fit()
        alarms = det.predict(xs)
        for row, alarm in zip(xs, alarms):
            s = init()
            for x in log_lr_increments(pre, post, row):
                s = step(s, x)
            assert alarm == (s.n if s.alarmed else 0)


def test_detector_transform_freezes_after_alarm(shift_pair):
    det = SRPDetector(*shift_pair, log_b=2.0).fit()
    path = det.transform(np.full(20, 3.0))[0]
    n = det.predict(np.full(20, 3.0))[0]
    assert n > 0 and (path[n - 1:] == path[n - 1]).all()


def test_detector_get_params_clone(two_state):
    from sklearn.base import clone
    det = ShiryaevDetector(*two_state, log_b=3.0, p=0.2)
    assert clone(det).get_params()["p"] == 0.2


def test_quasi_stationary_support_below_threshold(two_state):
    psi = estimate_quasi_stationary(*two_state, math.log(20), particles=2000, seed=4)
    assert (psi.support < 20).all()
    assert psi.weights.sum() == pytest.approx(1.0)
    back = QuasiStationaryDist.from_dict(psi.to_dict())
    np.testing.assert_array_equal(back.support, psi.support)
    assert back.uses_states


def test_quasi_stationary_start_is_reproducible(two_state):
    psi = estimate_quasi_stationary(*two_state, math.log(20), particles=500, seed=4)
    cfg = DetectorConfig("srp", math.log(20), init="quasi_stationary", psi=psi)
    sc = ChangeScenario(*two_state, omega=5)
    assert run_to_alarm(sc, cfg, 10_000, 9, trial=3) == run_to_alarm(sc, cfg, 10_000, 9, trial=3)


def test_one_state_pre_post_dimension_mismatch(shift_pair, two_state):
    with pytest.raises(ValidationError):
        SRPDetector(shift_pair[0], two_state[1]).fit().transform(np.zeros(3))
