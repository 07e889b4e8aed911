"""Simulation estimators for renewal-theoretic constants of the log-LR walk.

The second-order delay approximation for the zero-start SRP rule reads

    E_1 N_b ~ (b - E eta + rho - int Delta dm_+ + Delta(w0)) / K

where ``K`` is the post-change Kullback-Leibler number, ``rho`` the mean of
the limiting overshoot (computed from ladder heights), ``eta`` the limit of
the slowly changing term ``log(1 + sum_k exp(-S_k))`` and ``Delta`` the
solution of the Poisson equation ``E_w Delta(W_1) - Delta(w) = g(w) - K``
with ``g(w) = E_w S_1``. Each piece is estimated here by simulation.

Walks are produced by increment sources. Every source exposes
``initial(n)``, ``step(state, U, Z) -> (state, sigma)`` and ``take(state, idx)``;
sources used for the Poisson equation also expose ``first_step_nodes`` and
``coalesced``. Trial ``i`` of any estimator uses ``trial_rng(seed, i)``, the
same stream a detector run with that seed uses, so walks and detectors can be
coupled exactly.
"""

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from . import _streams
from .exceptions import (DomainError, DriftError, PoissonResidualError, SuspiciousModelWarning,
                         ValidationError)
from .detectors import crossed
from .harness import McEstimate
from .hmm import stationary_distribution
from .likelihood import ChainState, advance, observe
from .validation import check_stochastic_matrix

GH_NODES = 12
COALESCE_TOL = 1e-12
POOL_STREAM = 4
NOISE_STREAM = 5
PROBE_STREAM = 6


# increment sources


class ConstantIncrements:
    """Deterministic walk with every increment equal to ``c``."""

    def __init__(self, c):
        self.c = float(c)

    def initial(self, n):
        return np.zeros(n)

    def step(self, state, U, Z):
        return state, np.full(len(U), self.c)

    def take(self, state, idx):
        return state[idx]


class IidIncrements:
    """IID increments from a frozen scipy distribution by inverse CDF."""

    def __init__(self, dist):
        self.dist = dist

    def initial(self, n):
        return np.zeros(n)

    def step(self, state, U, Z):
        return state, self.dist.ppf(np.clip(U, 1e-300, None))

    def take(self, state, idx):
        return state[idx]


class HmmIncrements:
    """The log-LR walk of an HMM pair.

    ``under="post"`` generates data from the post-change model and emits
    ``log(p1/p0)`` increments (drift K10). ``under="pre"`` generates from the
    pre-change model and emits ``log(p0/p1)`` (drift K01). Walks start at the
    virtual initial state.
    """

    def __init__(self, pre, post, under="post", gh_nodes=GH_NODES):
        if under not in ("post", "pre"):
            raise ValidationError("under must be 'post' or 'pre'")
        if pre.d != post.d:
            raise ValidationError(f"pre has d={pre.d} but post has d={post.d}")
        self.pre, self.post, self.under = pre, post, under
        self.gen = post if under == "post" else pre
        self.sign = 1.0 if under == "post" else -1.0
        t, w = np.polynomial.hermite.hermgauss(gh_nodes)
        self._gh_t = t * math.sqrt(2.0)
        self._gh_w = w / math.sqrt(math.pi)

    def initial(self, n):
        return ChainState.virtual(self.pre, self.post, n)

    def step(self, state, U, Z):
        state, sigma = advance(self.pre, self.post, self.gen, state, U, Z)
        return state, self.sign * sigma

    def take(self, state, idx):
        return state.take(idx)

    def first_step_nodes(self, state):
        """Quadrature over the first step from each row.

        Returns successor states (``K`` consecutive rows per input row), weights
        of shape (n, K) and the matching increments.
        """
        n, d, m = len(state), self.gen.d, len(self._gh_t)
        em = self.gen.emission
        probs = np.where((state.x < 0)[:, None], self.gen.pi, self.gen.P[np.maximum(state.x, 0)])
        prev = np.where(state.fresh, 0.0, state.xi)
        y = np.tile(np.repeat(np.arange(d), m), n)
        rows = np.repeat(np.arange(n), d * m)
        mu = em._mean[y] + em._ar[y] * prev[rows]
        xi = mu + em._stdev[y] * np.tile(self._gh_t, n * d)
        base = state.take(rows)
        l0, l1, u0, u1 = observe(self.pre, self.post, base, xi)
        succ = ChainState(y, xi, u0, u1, np.zeros(len(y), dtype=bool))
        weights = (probs[:, :, None] * self._gh_w).reshape(n, d * m)
        return succ, weights, (self.sign * (l1 - l0)).reshape(n, d * m)

    def coalesced(self, a, b):
        same = (a.x == b.x) & (a.xi == b.xi) & (a.fresh == b.fresh)
        for j in range(a.u0.shape[1]):
            same &= np.abs(a.u0[:, j] - b.u0[:, j]) < COALESCE_TOL
            same &= np.abs(a.u1[:, j] - b.u1[:, j]) < COALESCE_TOL
        return same


class FiniteChainIncrements:
    """Increments ``g[x, y]`` attached to the transitions of a finite chain.

    State ``-1`` is the start: the first step draws ``y`` from the stationary
    vector and emits ``g0[y]`` (zero by default).
    """

    def __init__(self, trans, g, g0=None):
        self.P = check_stochastic_matrix(trans)
        self.g = np.asarray(g, dtype=float)
        if self.g.shape != self.P.shape:
            raise ValidationError("g must have the same shape as trans")
        self.pi = stationary_distribution(self.P)
        self.g0 = np.zeros(len(self.P)) if g0 is None else np.asarray(g0, dtype=float)
        self._cum = np.cumsum(self.P, axis=1)[:, :-1]
        self._pi_cum = np.cumsum(self.pi)[:-1]

    @property
    def d(self):
        return len(self.P)

    def initial(self, n):
        return np.full(n, -1)

    def step(self, state, U, Z):
        cum = np.where((state < 0)[:, None], self._pi_cum, self._cum[np.maximum(state, 0)])
        y = (U[:, None] >= cum).sum(axis=1)
        sigma = np.where(state < 0, self.g0[y], self.g[np.maximum(state, 0), y])
        return y, sigma

    def take(self, state, idx):
        return state[idx]

    def first_step_nodes(self, state):
        n, d = len(state), self.d
        probs = np.where((state < 0)[:, None], self.pi, self.P[np.maximum(state, 0)])
        y = np.tile(np.arange(d), n)
        rows = np.repeat(np.arange(n), d)
        sigma = np.where(state[rows] < 0, self.g0[y], self.g[np.maximum(state[rows], 0), y])
        return y, probs, sigma.reshape(n, d)

    def coalesced(self, a, b):
        return a == b

    def drift(self):
        return float(self.pi @ (self.P * self.g).sum(axis=1))

    def poisson_solution(self):
        """Exact solution of ``(P - I) Delta = g_bar - K`` normalized by ``pi Delta = 0``."""
        gbar = (self.P * self.g).sum(axis=1)
        k = float(self.pi @ gbar)
        A = np.vstack([self.P - np.eye(self.d), self.pi])
        rhs = np.concatenate([gbar - k, [0.0]])
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        return sol


def _concat(source, states):
    if isinstance(states[0], ChainState):
        return ChainState.concat(states)
    return np.concatenate(states)


# Kullback-Leibler numbers


@dataclass(frozen=True)
class KlEstimate:
    k10: float
    k01: float
    se10: float
    se01: float
    steps: int
    burn_in: int
    chains: int
    seed: object
    flagged: bool = False


def _walk_mean(source, chains, steps, burn_in, seed):
    bank = _streams.trial_bank(seed, range(chains))
    state = source.initial(chains)
    total = np.zeros(chains)
    for t in range(steps):
        U, Z = bank.next()
        state, sigma = source.step(state, U, Z)
        if t >= burn_in:
            total += sigma
    means = total / (steps - burn_in)
    se = float(means.std(ddof=1) / math.sqrt(chains)) if chains > 1 else 0.0
    return float(means.mean()), se


def estimate_kl(post, pre, steps=2000, burn_in=200, seed=0, chains=128):
    """Long-run increment averages under each model.

    ``chains`` independent chains each contribute one batch mean; the standard
    errors come from the spread of those means. A warning is issued when an
    estimate is not positive beyond three standard errors.
    """
    if steps <= burn_in:
        raise ValidationError("steps must exceed burn_in")
    k10, se10 = _walk_mean(HmmIncrements(pre, post, "post"), chains, steps, burn_in, seed)
    k01, se01 = _walk_mean(HmmIncrements(pre, post, "pre"), chains, steps, burn_in, seed + 1)
    flagged = k10 <= 3 * se10 or k01 <= 3 * se01
    if flagged:
        warnings.warn(f"KL estimates not positive beyond 3 SE (k10={k10:.4g}, k01={k01:.4g}); "
                      "are the two models distinguishable?", SuspiciousModelWarning, stacklevel=2)
    return KlEstimate(k10, k01, se10, se01, steps, burn_in, chains, seed, flagged)


# ladder heights and overshoot


@dataclass(frozen=True, eq=False)
class OvershootSummary:
    """Ladder-height moments and overshoot samples of an upward-drifting walk.

    ``rho = E H^2 / (2 E H)`` over ladder heights ``H`` is the mean of the
    limiting overshoot law. ``overshoots`` maps each requested threshold to
    the overshoot samples of the walk started at zero.
    """

    mean_ladder: float
    mean_sq_ladder: float
    rho: float
    rho_se: float
    heights: np.ndarray
    overshoots: dict
    trials: int
    burn_ladders: int
    seed: object
    ladder_states: object = field(default=None, repr=False)
    ladder_state_heights: np.ndarray = field(default=None, repr=False)

    def empirical_cdf(self, y):
        """Limiting overshoot CDF ``G(y) = E min(H, y) / E H`` from the ladder heights."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        vals = np.minimum(self.heights[None, :], np.maximum(y, 0)[:, None]).mean(axis=1)
        return vals / self.heights.mean()

    def mean_overshoot(self, b):
        x = self.overshoots[b]
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def simulate_ladder(source, trials=4000, seed=0, burn_ladders=20, ladders=10, thresholds=(),
                    cap=100_000, keep_states=64):
    """Ascending ladder epochs of the walk started at zero.

    The first ``burn_ladders`` ladders of each trial are discarded so that the
    chain state at ladder epochs approaches its stationary law; the next
    ``ladders`` heights are kept. Overshoots over each threshold are recorded
    from the same paths. The chain state at the first retained ladder epoch of
    the first ``keep_states`` trials is stored for later integration.
    """
    thresholds = tuple(float(b) for b in thresholds)
    bank = _streams.trial_bank(seed, range(trials))
    state = source.initial(trials)
    S = np.zeros(trials)
    M = np.zeros(trials)
    count = np.zeros(trials, dtype=np.int64)
    A = np.zeros(trials)
    B = np.zeros(trials)
    heights = []
    over = {b: np.full(trials, np.nan) for b in thresholds}
    kept = {}
    kept_h = {}
    goal = burn_ladders + ladders
    for _ in range(cap):
        U, Z = bank.next()
        state, sigma = source.step(state, U, Z)
        S = S + sigma
        lad = S > M
        if lad.any():
            h = S - M
            count = count + lad
            rec = lad & (count > burn_ladders) & (count <= goal)
            heights.append(h[rec])
            A += np.where(rec, h * h, 0.0)
            B += np.where(rec, h, 0.0)
            M = np.where(lad, S, M)
            first = np.flatnonzero(lad & (count == burn_ladders + 1))
            for i in first[first < keep_states]:
                kept[int(i)] = source.take(state, [i])
                kept_h[int(i)] = float(h[i])
        for b in thresholds:
            o = over[b]
            new = np.isnan(o) & (S >= b)
            o[new] = S[new] - b
        if count.min() >= goal and all(not np.isnan(over[b]).any() for b in thresholds):
            break
    else:
        raise DriftError(f"walk did not complete {goal} ladders within {cap} steps; "
                         "is the drift positive?")
    H = np.concatenate(heights)
    mean_a, mean_b = A.mean(), B.mean()
    ratio = mean_a / mean_b
    resid = A - ratio * B
    se_ratio = resid.std(ddof=1) / (math.sqrt(trials) * mean_b) if trials > 1 else 0.0
    states = _concat(source, [kept[i] for i in sorted(kept)]) if kept else None
    state_h = np.array([kept_h[i] for i in sorted(kept)])
    return OvershootSummary(float(H.mean()), float((H * H).mean()), float(ratio / 2),
                            float(se_ratio / 2), H, over, trials, burn_ladders, seed, states,
                            state_h)


# the nonlinear term


@dataclass(frozen=True)
class EtaEstimate:
    mean_eta: float
    se: float
    truncation_threshold: float
    trials: int
    seed: object = None


def estimate_eta(source, trials=4000, trunc_threshold=40.0, seed=0, burn_ladders=20, run=50,
                 cap=100_000):
    """Mean of ``log(1 + sum_{k>=1} exp(-S_k))`` from a ladder epoch after burn-in.

    Each trial first completes ``burn_ladders`` ascending ladders, then restarts
    the sum at zero and accumulates until the walk has stayed above
    ``trunc_threshold`` for ``run`` consecutive steps.
    """
    bank = _streams.trial_bank(seed, range(trials))
    state = source.initial(trials)
    S = np.zeros(trials)
    M = np.zeros(trials)
    count = np.zeros(trials, dtype=np.int64)
    base = np.zeros(trials)
    total = np.zeros(trials)
    streak = np.zeros(trials, dtype=np.int64)
    active = np.full(trials, burn_ladders == 0)
    for _ in range(cap):
        U, Z = bank.next()
        state, sigma = source.step(state, U, Z)
        S = S + sigma
        rel = S - base
        total = np.where(active, total + np.exp(-np.where(active, rel, 0.0)), total)
        streak = np.where(active & (rel > trunc_threshold), streak + 1, 0)
        lad = S > M
        count = count + lad
        M = np.where(lad, S, M)
        start = ~active & lad & (count >= burn_ladders)
        base = np.where(start, S, base)
        active = active | start
        if (streak >= run).all():
            break
    else:
        raise DriftError(f"eta truncation not reached within {cap} steps")
    eta = np.log1p(total)
    return EtaEstimate(float(eta.mean()), float(eta.std(ddof=1) / math.sqrt(trials)),
                       float(trunc_threshold), trials, seed)


# Poisson equation


@dataclass(frozen=True, eq=False)
class DeltaEstimate:
    """Poisson-equation solution estimated at probe states.

    ``delta_at[j]`` is the estimate at probe ``j`` (normalized so that its
    stationary mean is zero), ``residuals[j]`` the plug-in residual of the
    Poisson equation there. ``delta_init`` is the value at the initial state
    of the walk and ``integral_mplus`` the average over ladder-epoch states.
    """

    delta_at: np.ndarray
    delta_se: np.ndarray
    residuals: np.ndarray
    probes: object
    delta_init: float
    delta_init_se: float
    integral_mplus: float
    integral_se: float
    k_hat: float
    horizon: int
    replicates: int
    steps_used: int
    coalesced: bool
    tolerance: float
    seed: object = None

    def max_residual(self):
        return float(np.abs(self.residuals).max()) if len(self.residuals) else 0.0


class _Coupling:
    """Reference paths from a stationary pool, shared noise for coupled paths."""

    def __init__(self, source, replicates, horizon, seed, burn):
        self.source, self.I, self.H = source, replicates, horizon
        pool_bank = _streams.trial_bank(seed, range(replicates), POOL_STREAM)
        pool = source.initial(replicates)
        for _ in range(burn):
            pool, _ = source.step(pool, *pool_bank.next())
        self.U, self.Z = _streams.trial_bank(seed, range(replicates), NOISE_STREAM).fixed(
            horizon + 1)
        self.ref_states = [pool]
        self.ref_sigma = []
        st = pool
        for t in range(horizon + 1):
            st, sig = source.step(st, self.U[:, t], self.Z[:, t])
            self.ref_states.append(st)
            self.ref_sigma.append(sig)
        self.pool = pool
        self.gbar_pool = gbar(source, pool)
        self.k_hat = float(self.gbar_pool.mean())
        self.steps_used = 0
        self.coalesced = True

    def tail(self, state, r, col):
        """Per-row sum of ``sigma - sigma_ref`` from noise column ``col`` to the horizon.

        Row ``k`` follows replicate ``r[k]``. Rows that coalesce with their
        reference stop contributing and are dropped.
        """
        src = self.source
        acc = np.zeros(len(r))
        live = np.arange(len(r))
        for t in range(col, self.H + 1):
            rr = r[live]
            state, sig = src.step(state, self.U[rr, t], self.Z[rr, t])
            acc[live] += sig - self.ref_sigma[t][rr]
            same = src.coalesced(state, src.take(self.ref_states[t + 1], rr))
            if same.any():
                keep = ~same
                live = live[keep]
                state = src.take(state, keep)
            if not len(live):
                self.steps_used = max(self.steps_used, t + 1)
                return acc
        self.steps_used = self.H + 1
        self.coalesced = False
        return acc

    def delta(self, states, chunk=32):
        """Rao-Blackwellized estimates and standard errors at each row of ``states``."""
        src, I = self.source, self.I
        m = len(states.x) if isinstance(states, ChainState) else len(states)
        g = gbar(src, states)
        out, se = np.empty(m), np.empty(m)
        for a in range(0, m, chunk):
            idx = np.arange(a, min(a + chunk, m))
            rows = np.repeat(idx, I)
            r = np.tile(np.arange(I), len(idx))
            start = src.take(states, rows)
            s1, _ = src.step(start, self.U[r, 0], self.Z[r, 0])
            D = (g[rows] - self.gbar_pool[r] + self.tail(s1, r, 1)).reshape(len(idx), I)
            out[idx] = -D.mean(axis=1)
            se[idx] = D.std(axis=1, ddof=1) / math.sqrt(I)
        return out, se

    def delta_after_first_step(self, states):
        """Unsmoothed estimate at successor states, coupled through noise column 1 on."""
        I = self.I
        m = len(states.x) if isinstance(states, ChainState) else len(states)
        rows = np.repeat(np.arange(m), I)
        r = np.tile(np.arange(I), m)
        T = self.tail(self.source.take(states, rows), r, 1).reshape(m, I)
        return -T.mean(axis=1)


def gbar(source, states):
    """One-step mean increment ``E_w sigma_1`` by quadrature over the first step."""
    _, w, sig = source.first_step_nodes(states)
    return (w * sig).sum(axis=1)


def harvest_states(source, n, seed, burn=200, stream=PROBE_STREAM):
    """``n`` states from independent chains run ``burn`` steps from the start."""
    bank = _streams.trial_bank(seed, range(n), stream)
    st = source.initial(n)
    for _ in range(burn):
        st, _ = source.step(st, *bank.next())
    return st


def estimate_delta(source, probes=None, horizon=200, replicates=4000, seed=0, n_probes=50,
                   ladder_states=None, tol=0.05, burn=200, check=True, ladder_weights=None):
    """Estimate the Poisson-equation solution by coupled simulation.

    For replicate ``i`` a reference path starts at a stationary pool state and
    every coupled path reuses its noise. Then

        Delta(w) = -mean_i [ g(w) - g(p_i) + sum_{n>=1} (sigma_n(w) - sigma_n(p_i)) ]

    where the first-step difference is replaced by its conditional mean. Paths
    are followed until they coalesce with their reference or reach
    ``horizon``. The residual at each probe compares the quadrature average of
    the estimate one step ahead with the estimate at the probe itself.

    ``integral_mplus`` is the plain average over ``ladder_states``; pass
    ``ladder_weights`` (e.g. the ladder heights) for a weighted average.
    """
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    cp = _Coupling(source, replicates, horizon, seed, burn)
    if probes is None:
        probes = harvest_states(source, n_probes, seed, burn)
    d_at, d_se = cp.delta(probes)
    m = len(d_at)
    res = np.empty(m)
    gp = gbar(source, probes)
    for j in range(m):
        succ, w, _ = source.first_step_nodes(source.take(probes, [j]))
        ahead = cp.delta_after_first_step(succ)
        res[j] = float(w[0] @ ahead) - d_at[j] - (gp[j] - cp.k_hat)
    init, init_se = cp.delta(source.initial(1))
    if ladder_states is not None:
        lad, _ = cp.delta(ladder_states)
        w = np.ones(len(lad)) if ladder_weights is None else np.asarray(ladder_weights, float)
        w = w / w.sum()
        integral = float(w @ lad)
        # effective-sample-size standard error of a weighted mean
        integral_se = float(math.sqrt(w @ (w * (lad - integral) ** 2))) if len(lad) > 1 else 0.0
    else:
        integral, integral_se = 0.0, math.nan
    est = DeltaEstimate(d_at, d_se, res, probes, float(init[0]), float(init_se[0]), integral,
                        integral_se, cp.k_hat, horizon, replicates, cp.steps_used, cp.coalesced,
                        tol, seed)
    if check and est.max_residual() > tol:
        raise PoissonResidualError(
            f"Poisson residual {est.max_residual():.4g} exceeds {tol} at probes "
            f"{np.flatnonzero(np.abs(res) > tol).tolist()}", est)
    return est


# second-order approximation


def approx_delay(b, kl, ov, eta, delta, w_init=None):
    """Second-order approximation to the zero-start SRP delay ``E_1 N_b``.

    ``w_init`` overrides the Poisson term at the initial state; by default the
    estimate stored in ``delta`` is used. ``delta=None`` drops both Poisson
    terms (exact when they vanish, e.g. for a one-state chain).
    """
    k = kl if isinstance(kl, (int, float)) else kl.k10
    if not k > 0:
        raise DomainError(f"post-change KL number must be positive, got {k}")
    if delta is None:
        integral, d0 = 0.0, 0.0
    else:
        integral = delta.integral_mplus
        d0 = delta.delta_init if w_init is None else float(w_init)
    return (float(b) - eta.mean_eta + ov.rho - integral + d0) / k


@dataclass(frozen=True)
class DelayConstants:
    """Everything the approximation needs, in a form that round-trips through JSON."""

    k10: float
    k10_se: float
    k01: float
    k01_se: float
    rho: float
    rho_se: float
    mean_eta: float
    eta_se: float
    integral_mplus: float
    integral_se: float
    delta_init: float
    delta_init_se: float
    max_residual: float
    seed: object = None
    meta: dict = field(default_factory=dict)

    def approx_delay(self, b):
        if not self.k10 > 0:
            raise DomainError(f"post-change KL number must be positive, got {self.k10}")
        return (float(b) - self.mean_eta + self.rho - self.integral_mplus
                + self.delta_init) / self.k10

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def estimate_constants(pre, post, seed, trials=4000, replicates=2000, n_probes=50,
                       kl_steps=2000, tol=0.05, check=True, variant="mplus", keep_states=64):
    """Run all four estimators on one model pair.

    ``variant="mplus"`` averages the nonlinear term and the Poisson term over
    the stationary ladder-epoch law. ``variant="crossing"`` starts the
    nonlinear term at the initial state and weights ladder-epoch states by
    their ladder height, which is the limiting law of the state at the
    threshold crossing.
    """
    if variant not in ("mplus", "crossing"):
        raise ValidationError("variant must be 'mplus' or 'crossing'")
    kl = estimate_kl(post, pre, steps=kl_steps, seed=seed)
    src = HmmIncrements(pre, post, "post")
    ov = simulate_ladder(src, trials, seed + 2, keep_states=keep_states)
    crossing = variant == "crossing"
    eta = estimate_eta(src, trials, seed=seed + 3, burn_ladders=0 if crossing else 20)
    delta = estimate_delta(src, replicates=replicates, seed=seed + 4, n_probes=n_probes,
                           ladder_states=ov.ladder_states, tol=tol, check=check,
                           ladder_weights=ov.ladder_state_heights if crossing else None)
    meta = {"trials": trials, "replicates": replicates, "n_probes": n_probes,
            "kl_steps": kl_steps, "variant": variant, "coalesced": delta.coalesced,
            "steps_used": delta.steps_used}
    return DelayConstants(kl.k10, kl.se10, kl.k01, kl.se01, ov.rho, ov.rho_se, eta.mean_eta,
                          eta.se, delta.integral_mplus, delta.integral_se, delta.delta_init,
                          delta.delta_init_se, delta.max_residual(), seed, meta)


# first-passage laboratory


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary ``A(t; lam)``: constant, linear ``c + u t`` or a callable ``fn(t, lam)``."""

    form: str
    lam: float = 0.0
    c: float = 0.0
    u: float = 0.0
    fn: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.form not in ("constant", "linear", "callable"):
            raise ValidationError(f"unknown boundary form {self.form!r}")
        if self.form == "callable" and not callable(self.fn):
            raise ValidationError("callable boundary needs fn(t, lam)")

    @classmethod
    def constant(cls, lam):
        return cls("constant", lam=float(lam))

    @classmethod
    def linear(cls, c, u):
        return cls("linear", c=float(c), u=float(u))

    @classmethod
    def of(cls, fn, lam):
        return cls("callable", lam=float(lam), fn=fn)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            return np.full(t.shape, self.lam)
        if self.form == "linear":
            return self.c + self.u * t
        return np.asarray(self.fn(t, self.lam), dtype=float)

    def slope(self, t, h=1e-5):
        return (self.value(t + h) - self.value(t - h)) / (2 * h)

    def quantities(self, drift, t_max=1e7):
        """``b_lam`` (last time the boundary is above the drift line), its slope there
        and the largest slope beyond it."""
        if self.form == "linear" and not self.u < drift:
            raise DomainError("linear boundary slope must be below the walk drift")
        gap = lambda t: float(self.value(t) - t * drift)  # noqa: E731
        if gap(1.0) < 0:
            b = 1.0
        else:
            hi = 2.0
            while gap(hi) >= 0:
                hi *= 2
                if hi > t_max:
                    raise DomainError("boundary stays above the drift line; b_lambda is infinite")
            b = optimize.brentq(gap, hi / 2 if hi > 2 else 1.0, hi)
        grid = b + np.geomspace(1e-6, max(10 * b, 10.0), 400) - 1e-6
        return {"b_lambda": b, "d_lambda": float(self.slope(b)),
                "d_bar": float(self.slope(grid).max())}


@dataclass(frozen=True, eq=False)
class PassageSample:
    """Stopping times and overshoots; censored trials have ``time == 0``."""

    times: np.ndarray
    overshoots: np.ndarray
    cap: int
    seed: object

    @property
    def censored(self):
        return self.times == 0

    def time_estimate(self):
        return _estimate(self.times[~self.censored], self)

    def overshoot_estimate(self):
        return _estimate(self.overshoots[~self.censored], self)


def _estimate(values, sample):
    n = len(values)
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(values.mean()) if n else math.nan, se, len(sample.times),
                      int(sample.censored.sum()), sample.seed, 0.0,
                      bool(sample.censored.any()), 0, n)


def _passage(source, trials, cap, seed, level, perturb, strict):
    bank = _streams.trial_bank(seed, range(trials))
    state = source.initial(trials)
    S = np.zeros(trials)
    L = np.full(trials, -np.inf)  # log sum_{k<n} exp(-S_k), S_0 = 0
    times = np.zeros(trials, dtype=np.int64)
    over = np.full(trials, np.nan)
    live = np.arange(trials)
    for n in range(1, int(cap) + 1):
        U, Z = bank.next()
        state, sigma = source.step(state, U, Z)
        if perturb == "srp":
            L = np.logaddexp(L, -S)
        S = S + sigma
        if perturb == "srp":
            Z_n = S + L
        elif perturb is None:
            Z_n = S
        else:
            Z_n = S + np.asarray(perturb(n, S), dtype=float)
        A = level(n)
        hit = Z_n > A if strict else crossed(Z_n, A)
        if hit.any():
            times[live[hit]] = n
            over[live[hit]] = Z_n[hit] - A
            keep = ~hit
            live = live[keep]
            S, L = S[keep], L[keep]
            state = source.take(state, keep)
            bank.keep(keep)
            if not len(live):
                break
    return PassageSample(times, over, int(cap), seed)


def first_passage_tau(source, c, u, trials, cap, seed, strict=True):
    """First ``n`` with ``S_n - u n > c`` and its overshoot ``S_n - u n - c``."""
    if c < 0:
        raise ValidationError("c must be >= 0")
    src = _Drifted(source, u) if u else source
    return _passage(src, trials, cap, seed, lambda n: float(c), None, strict)


def nonlinear_first_passage(source, boundary, perturbation=None, trials=1000, cap=100_000,
                            seed=0, strict=True):
    """First ``n`` with ``S_n + eta_n`` above ``boundary.value(n)``.

    ``perturbation`` is ``None`` (``eta = 0``), ``"srp"`` for
    ``eta_n = log(1 + sum_{k=1}^{n-1} exp(-S_k))``, which makes ``S_n + eta_n``
    the log SR statistic, or a callable ``f(n, S_n)``. Use ``strict=False`` to
    match the detectors' ``>=`` alarm convention.
    """
    if perturbation not in (None, "srp") and not callable(perturbation):
        raise ValidationError("perturbation must be None, 'srp' or a callable")
    level = lambda n: float(boundary.value(n))  # noqa: E731
    return _passage(source, trials, cap, seed, level, perturbation, strict)


class _Drifted:
    def __init__(self, source, u):
        self.source, self.u = source, float(u)

    def initial(self, n):
        return self.source.initial(n)

    def step(self, state, U, Z):
        state, sigma = self.source.step(state, U, Z)
        return state, sigma - self.u

    def take(self, state, idx):
        return self.source.take(state, idx)
