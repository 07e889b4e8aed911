import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmmdetect.exceptions import SizeGuardError
from hmmdetect.hmm import HmmParams
from hmmdetect.likelihood import (brute_force_likelihood, init_filter, log_lr_increments,
                                  m0_matrix, mk_matrix, filter_step)


def test_mk_matrix_layout(two_state):
    pre = two_state[0]
    M = mk_matrix(pre, 0.0, 0.0)
    f = np.exp(pre.emission.log_density(0.0, 0.0))
    # M[a, b] = p_ba f(xi; a)
    np.testing.assert_allclose(M, [[0.9 * f[0], 0.2 * f[0]], [0.1 * f[1], 0.8 * f[1]]])


def test_matrix_product_equals_filter(two_state):
    pre, post = two_state
    xs = [0.3, -1.2, 2.0, 0.7]
    v = m0_matrix(pre, xs[0]) @ pre.pi
    for t in range(1, len(xs)):
        v = mk_matrix(pre, xs[t], xs[t - 1]) @ v
    fp = init_filter(pre, post, xs[0])
    for t in range(1, len(xs)):
        fp = filter_step(fp, xs[t], xs[t - 1], pre, post)
    assert fp.log_norm0 == pytest.approx(math.log(v.sum()), rel=1e-12)
    np.testing.assert_allclose(fp.u0, v / v.sum(), rtol=1e-12)


def test_one_state_increment_is_closed_form(shift_pair):
    xs = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(log_lr_increments(*shift_pair, xs), xs - 0.5, atol=1e-12)


def _model(d, seed, ar):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(d), size=d) * 0.9 + 0.1 / d
    return HmmParams.gaussian(P, rng.normal(size=d), rng.uniform(0.5, 2, size=d),
                              ar=rng.uniform(-0.5, 0.5, size=d) if ar else None)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 3), n=st.integers(1, 7), seed=st.integers(0, 10**6), ar=st.booleans())
def test_filter_matches_path_sum(d, n, seed, ar):
    pre, post = _model(d, seed, ar), _model(d, seed + 1, ar)
    xs = np.random.default_rng(seed + 2).normal(size=n + 1) * 2
    fp = init_filter(pre, post, xs[0])
    for t in range(1, len(xs)):
        fp = filter_step(fp, xs[t], xs[t - 1], pre, post)
    b0 = brute_force_likelihood(pre, xs).log_value
    b1 = brute_force_likelihood(post, xs).log_value
    assert fp.log_norm0 == pytest.approx(b0, rel=1e-9, abs=1e-9)
    assert fp.cum_log_lr == pytest.approx(b1 - b0, rel=1e-9, abs=1e-9)


def test_long_path_stays_finite(two_state):
    xs = np.random.default_rng(0).normal(size=5000) * 3
    s = log_lr_increments(*two_state, xs)
    assert np.isfinite(s).all()


def test_size_guard(two_state):
    with pytest.raises(SizeGuardError):
        brute_force_likelihood(two_state[0], np.zeros(30))
