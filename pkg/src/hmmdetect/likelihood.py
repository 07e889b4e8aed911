"""HMM likelihoods as normalized products of random matrices.

``M_0 = diag(f(xi_0; x))`` and ``M_k[a, b] = p_ba * f(xi_k; a | xi_{k-1})``, so
``p_n(xi_0..xi_n) = ||M_n ... M_0 pi||_1``. Filters store only the direction of
the product; the log norms are accumulated separately, which keeps everything
finite however long the path is.

The batched helpers at the bottom drive every simulation in the package: the
detectors, the OC harness and the renewal estimators all consume the same
``advance`` so coupled seeds give identical increment streams.
"""

import itertools
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .exceptions import NumericDegeneracyError, SizeGuardError, ValidationError

SIZE_GUARD = 10**7


def m0_matrix(params, xi0):
    return np.diag(np.exp(params.emission.log_density(xi0, 0.0)))


def mk_matrix(params, xi, xi_prev):
    f = np.exp(params.emission.log_density(xi, xi_prev))
    return params.P.T * f[:, None]


def _normalize_log(lv):
    """Split log-vectors (..., d) into (log L1 norm, normalized vector)."""
    # column loops beat axis reductions for the small d used here
    m = lv[..., 0]
    for j in range(1, lv.shape[-1]):
        m = np.maximum(m, lv[..., j])
    if not np.all(np.isfinite(m)):
        raise NumericDegeneracyError("filter vector underflowed to zero")
    e = np.exp(lv - m[..., None])
    s = e[..., 0]
    for j in range(1, lv.shape[-1]):
        s = s + e[..., j]
    return m + np.log(s), e / s[..., None]


def _log_pred(params, u, fresh):
    """Log of the one-step prediction ``u P``; fresh rows use the stationary vector."""
    # explicit row combination keeps each row's arithmetic independent of batch size
    pred = u[..., 0, None] * params.P[0]
    for b in range(1, params.d):
        pred = pred + u[..., b, None] * params.P[b]
    if fresh is not None:
        pred = np.where(np.asarray(fresh)[..., None], params.pi, pred)
    with np.errstate(divide="ignore"):
        return np.log(pred)


@dataclass(frozen=True, eq=False)
class FilterPair:
    """Normalized predictive filters under both models plus the running log-LR.

    ``log_norm0``/``log_norm1`` are the accumulated log norms whose difference
    is ``cum_log_lr`` (the telescoping form).
    """

    u0: np.ndarray
    u1: np.ndarray
    last_sigma: float
    cum_log_lr: float
    step_index: int
    log_norm0: float = 0.0
    log_norm1: float = 0.0


def _check_pair(pre, post):
    if pre.d != post.d:
        raise ValidationError(f"pre has d={pre.d} but post has d={post.d}")


def init_filter(pre, post, xi0):
    _check_pair(pre, post)
    l0, u0 = _normalize_log(_log_pred(pre, pre.pi, True) + pre.emission.log_density(xi0, 0.0))
    l1, u1 = _normalize_log(_log_pred(post, post.pi, True) + post.emission.log_density(xi0, 0.0))
    sigma = float(l1 - l0)
    return FilterPair(u0, u1, sigma, sigma, 0, float(l0), float(l1))


def filter_step(fp, xi, xi_prev, pre, post):
    l0, u0 = _normalize_log(_log_pred(pre, fp.u0, None) + pre.emission.log_density(xi, xi_prev))
    l1, u1 = _normalize_log(_log_pred(post, fp.u1, None) + post.emission.log_density(xi, xi_prev))
    sigma = float(l1 - l0)
    return replace(fp, u0=u0, u1=u1, last_sigma=sigma, cum_log_lr=fp.cum_log_lr + sigma,
                   step_index=fp.step_index + 1, log_norm0=fp.log_norm0 + float(l0),
                   log_norm1=fp.log_norm1 + float(l1))


def log_lr_increments(pre, post, xs):
    """All increments ``sigma_0..sigma_n`` for one observation sequence."""
    xs = np.asarray(xs, dtype=float)
    fp = init_filter(pre, post, xs[0])
    out = [fp.last_sigma]
    for t in range(1, len(xs)):
        fp = filter_step(fp, xs[t], xs[t - 1], pre, post)
        out.append(fp.last_sigma)
    return np.array(out)


@dataclass(frozen=True)
class PathLikelihood:
    log_value: float


def brute_force_likelihood(params, xs, chunk=100_000):
    """Exact path sum over every hidden trajectory. Exponential cost, for testing only."""
    xs = np.asarray(xs, dtype=float)
    n1, d = len(xs), params.d
    if n1 == 0:
        raise ValidationError("observation sequence is empty")
    if d**n1 > SIZE_GUARD:
        raise SizeGuardError(f"d^(n+1) = {d}^{n1} exceeds the guard {SIZE_GUARD}")
    prev = np.concatenate([[0.0], xs[:-1]])
    logf = params.emission.log_density(xs, prev)  # (n+1, d)
    with np.errstate(divide="ignore"):
        logP = np.log(params.P)
        logpi = np.log(params.pi)
    it = itertools.product(range(d), repeat=n1)
    parts = []
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        block = block.reshape(-1, n1)
        terms = logpi[block[:, 0]] + logf[np.arange(n1), block].sum(axis=1)
        if n1 > 1:
            terms = terms + logP[block[:, :-1], block[:, 1:]].sum(axis=1)
        parts.append(logsumexp(terms))
    return PathLikelihood(float(logsumexp(parts)))


# batched W-chain


@dataclass(eq=False)
class ChainState:
    """A batch of induced-chain states ``(X, xi, u0, u1)``.

    Rows flagged ``fresh`` are the virtual initial state: no observation yet,
    so the next step predicts with the stationary vectors and ``xi_prev = 0``.
    ``x = -1`` marks a hidden state that has not been drawn.
    """

    x: np.ndarray
    xi: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    fresh: np.ndarray

    def __len__(self):
        return len(self.xi)

    @classmethod
    def virtual(cls, pre, post, n):
        _check_pair(pre, post)
        return cls(np.full(n, -1), np.zeros(n), np.tile(pre.pi, (n, 1)),
                   np.tile(post.pi, (n, 1)), np.ones(n, dtype=bool))

    def take(self, idx):
        return ChainState(self.x[idx], self.xi[idx], self.u0[idx], self.u1[idx], self.fresh[idx])

    def copy(self):
        return self.take(slice(None))

    def row(self, i):
        """One state as a plain dict, convenient for reporting."""
        return {"x": int(self.x[i]), "xi": float(self.xi[i]), "u0": self.u0[i].tolist(),
                "u1": self.u1[i].tolist(), "fresh": bool(self.fresh[i])}

    @classmethod
    def concat(cls, states):
        return cls(*(np.concatenate([getattr(s, f) for s in states])
                     for f in ("x", "xi", "u0", "u1", "fresh")))


def observe(pre, post, state, xi):
    """Filter updates for new observations ``xi``; returns ``(log_norm0, log_norm1, u0, u1)``."""
    xi = np.asarray(xi, dtype=float)
    prev = np.where(state.fresh, 0.0, state.xi)
    l0, u0 = _normalize_log(_log_pred(pre, state.u0, state.fresh)
                            + pre.emission.log_density(xi, prev))
    l1, u1 = _normalize_log(_log_pred(post, state.u1, state.fresh)
                            + post.emission.log_density(xi, prev))
    return l0, l1, u0, u1


def advance(pre, post, gen, state, U, Z):
    """Move every row one step under generating model ``gen``.

    Returns the new ChainState and the log-LR increments ``sigma``.
    """
    x = gen.next_states(state.x, U)
    prev = np.where(state.fresh, 0.0, state.xi)
    xi = gen.emission.draw(x, prev, Z)
    l0, l1, u0, u1 = observe(pre, post, state, xi)
    return ChainState(x, xi, u0, u1, np.zeros(len(xi), dtype=bool)), l1 - l0


def feed(pre, post, state, xi):
    """Advance on supplied observations (no hidden state)."""
    l0, l1, u0, u1 = observe(pre, post, state, xi)
    return ChainState(state.x, np.asarray(xi, dtype=float), u0, u1,
                      np.zeros(len(state), dtype=bool)), l1 - l0
