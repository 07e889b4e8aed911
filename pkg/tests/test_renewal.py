import math

import numpy as np
import pytest
from scipy import stats

from hmmdetect.detectors import DetectorConfig
from hmmdetect.exceptions import DomainError, DriftError, SuspiciousModelWarning
from hmmdetect.harness import run_trials
from hmmdetect.hmm import ChangeScenario
from hmmdetect.renewal import (BoundarySpec, ConstantIncrements, DelayConstants,
                               FiniteChainIncrements, HmmIncrements, IidIncrements,
                               approx_delay, estimate_delta, estimate_eta, estimate_kl,
                               first_passage_tau, nonlinear_first_passage, simulate_ladder)


def test_kl_closed_form(shift_pair):
    kl = estimate_kl(shift_pair[1], shift_pair[0], steps=1000, seed=1)
    assert abs(kl.k10 - 0.5) <= 4 * kl.se10
    assert abs(kl.k01 - 0.5) <= 4 * kl.se01
    assert not kl.flagged


def test_kl_identical_models_warns(shift_pair):
    pre = shift_pair[0]
    with pytest.warns(SuspiciousModelWarning):
        kl = estimate_kl(pre, pre, steps=300, burn_in=10, seed=1)
    assert kl.flagged and kl.k10 == 0


def test_exponential_ladder_heights():
    ov = simulate_ladder(IidIncrements(stats.expon()), trials=4000, seed=2, burn_ladders=0,
                         ladders=5, thresholds=(5.0,))
    assert abs(ov.rho - 1) <= 4 * ov.rho_se
    m, se = ov.mean_overshoot(5.0)
    assert abs(m - 1) <= 4 * se


def test_limiting_overshoot_cdf_is_exponential():
    ov = simulate_ladder(IidIncrements(stats.expon()), trials=3000, seed=3, burn_ladders=0,
                         ladders=5)
    y = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(ov.empirical_cdf(y), 1 - np.exp(-y), atol=0.03)


def test_eta_for_constant_walk():
    eta = estimate_eta(ConstantIncrements(math.log(2)), trials=10, trunc_threshold=40)
    # log(1 + sum_k 2^-k) = log 2
    assert eta.mean_eta == pytest.approx(math.log(2), abs=1e-12)


def test_negative_drift_raises():
    with pytest.raises(DriftError):
        simulate_ladder(ConstantIncrements(-1.0), trials=5, cap=100)


def test_finite_chain_poisson_solution():
    P = [[0.5, 0.3, 0.2], [0.1, 0.7, 0.2], [0.3, 0.3, 0.4]]
    g = [[1.0, -0.5, 2.0], [0.0, 0.3, 1.5], [-1.0, 0.8, 0.2]]
    src = FiniteChainIncrements(P, g)
    exact = src.poisson_solution()
    # exact solution satisfies (P - I) Delta = g_bar - K
    gbar = (np.array(P) * np.array(g)).sum(axis=1)
    np.testing.assert_allclose(np.array(P) @ exact - exact, gbar - src.drift(), atol=1e-12)
    est = estimate_delta(src, probes=np.arange(3), replicates=3000, seed=1)
    np.testing.assert_allclose(est.delta_at, exact, atol=0.05)
    assert est.coalesced and est.max_residual() <= 0.05


def test_constant_first_passage():
    s = first_passage_tau(ConstantIncrements(1.0), 4.5, 0.0, trials=5, cap=100, seed=0)
    assert (s.times == 5).all()
    np.testing.assert_allclose(s.overshoots, 0.5)
    s = first_passage_tau(ConstantIncrements(1.0), 2.0, 0.5, trials=3, cap=100, seed=0)
    assert (s.times == 5).all()


def test_strict_crossing_convention():
    strict = first_passage_tau(ConstantIncrements(1.0), 4.0, 0.0, trials=2, cap=50, seed=0)
    loose = first_passage_tau(ConstantIncrements(1.0), 4.0, 0.0, trials=2, cap=50, seed=0,
                              strict=False)
    assert (strict.times == 5).all() and (loose.times == 4).all()


@pytest.mark.parametrize("pair", ["shift_pair", "two_state"])
def test_srp_perturbation_reproduces_detector(pair, request):
    pre, post = request.getfixturevalue(pair)
    log_b = math.log(30)
    s = nonlinear_first_passage(HmmIncrements(pre, post), BoundarySpec.constant(log_b), "srp",
                                trials=500, seed=3, strict=False)
    b = run_trials(ChangeScenario(pre, post, 1), DetectorConfig("srp", log_b), 500, 3, 100_000)
    np.testing.assert_array_equal(s.times, b.stop)
    np.testing.assert_allclose(s.overshoots, b.overshoot, atol=1e-9)


def test_linear_boundary_quantities():
    q = BoundarySpec.linear(10.0, 0.2).quantities(0.5)
    assert q["b_lambda"] == pytest.approx(10 / 0.3, rel=1e-8)
    assert q["d_lambda"] == pytest.approx(0.2)
    with pytest.raises(DomainError):
        BoundarySpec.linear(10.0, 0.6).quantities(0.5)


def test_approx_delay_without_poisson_terms():
    class Ov:
        rho = 0.6

    class Eta:
        mean_eta = 0.4

    assert approx_delay(10.0, 0.5, Ov, Eta, None) == pytest.approx((10 - 0.4 + 0.6) / 0.5)
    with pytest.raises(DomainError):
        approx_delay(10.0, 0.0, Ov, Eta, None)


def test_constants_json_round_trip(tmp_path):
    c = DelayConstants(0.5, 0.01, 0.5, 0.01, 0.6, 0.01, 0.4, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0,
                       seed=3, meta={"variant": "mplus"})
    path = tmp_path / "c.json"
    c.to_json(path)
    back = DelayConstants.from_json(path)
    assert back == c
    assert back.approx_delay(10.0) == pytest.approx(20.4)
