"""Stopping rules fed by log-likelihood-ratio increments.

All statistics are kept on the log scale:

* SRP (Shiryaev-Roberts, optionally with a randomized start):
  ``log R' = sigma + log(1 + R)``
* CUSUM: ``g' = max(g, 0) + sigma``
* Shiryaev with geometric prior ``p``: ``log R' = sigma - log(1 - p) + log(1 + R)``

A rule alarms at the first step ``n`` (number of observations consumed) with
statistic >= log threshold. Steps after an alarm are no-ops.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _streams
from .exceptions import NumericDegeneracyError, ValidationError
from .likelihood import ChainState, advance, feed
from .validation import check_log_threshold, check_observations

RULES = ("srp", "cusum", "shiryaev")
INITS = ("zero", "quasi_stationary")


# Relative slack on the alarm comparison. Without it the recursion can land
# an ulp below an integer threshold it reaches exactly (R_n = n for sigma = 0).
ALARM_TOL = 1e-12


def crossed(stat, log_b):
    """``stat >= log_b`` up to rounding in the recursion."""
    return stat >= log_b - ALARM_TOL * max(1.0, abs(log_b))


# scalar state machines


@dataclass(frozen=True)
class SrpState:
    log_b: float
    log_r: float = -math.inf
    n: int = 0
    alarmed: bool = False
    overshoot: float = math.nan


@dataclass(frozen=True)
class CusumState:
    log_b: float
    g: float = 0.0
    n: int = 0
    alarmed: bool = False
    overshoot: float = math.nan


@dataclass(frozen=True)
class ShiryaevState:
    """Shiryaev statistic ``R_{n,p}`` with its posterior ``R / (R + 1/p)``."""

    log_b: float
    p: float
    log_r: float = -math.inf
    posterior: float = 0.0
    n: int = 0
    alarmed: bool = False
    overshoot: float = math.nan

    @property
    def q(self):
        return 1.0 - self.p


def _log1p_exp(log_r):
    return np.logaddexp(0.0, log_r)


def srp_init(log_b, init=None, rng=None):
    """Start an SRP statistic at zero or at a draw from a quasi-stationary law."""
    log_b = check_log_threshold(log_b)
    if init is None or init == "zero":
        return SrpState(log_b)
    if not isinstance(init, QuasiStationaryDist):
        raise ValidationError("init must be 'zero' or a QuasiStationaryDist")
    r0 = float(init.draw(_streams.as_generator(rng), 1)[0])
    return SrpState(log_b, math.log(r0) if r0 > 0 else -math.inf)


def srp_step(s, sigma):
    if s.alarmed:
        return s
    log_r = float(sigma + _log1p_exp(s.log_r))
    if crossed(log_r, s.log_b):
        return replace(s, log_r=log_r, n=s.n + 1, alarmed=True, overshoot=log_r - s.log_b)
    return replace(s, log_r=log_r, n=s.n + 1)


def cusum_init(log_b):
    return CusumState(check_log_threshold(log_b))


def cusum_step(s, sigma):
    if s.alarmed:
        return s
    g = float(max(s.g, 0.0) + sigma)
    if crossed(g, s.log_b):
        return replace(s, g=g, n=s.n + 1, alarmed=True, overshoot=g - s.log_b)
    return replace(s, g=g, n=s.n + 1)


def posterior_from_log_r(log_r, p):
    """``R / (R + 1/p)`` evaluated as a logistic of ``log R + log p``."""
    return float(expit(log_r + math.log(p)))


def shiryaev_init(log_b, p):
    if not 0 < p <= 1:
        raise ValidationError(f"prior parameter p must lie in (0, 1], got {p}")
    return ShiryaevState(check_log_threshold(log_b), float(p))


def _neg_log_q(p):
    return math.inf if p == 1 else -math.log1p(-p)


def shiryaev_step(s, sigma):
    if s.alarmed:
        return s
    log_r = float(sigma + _neg_log_q(s.p) + _log1p_exp(s.log_r))
    post = posterior_from_log_r(log_r, s.p)
    if crossed(log_r, s.log_b):
        return replace(s, log_r=log_r, posterior=post, n=s.n + 1, alarmed=True,
                       overshoot=log_r - s.log_b)
    return replace(s, log_r=log_r, posterior=post, n=s.n + 1)


# quasi-stationary start


@dataclass(frozen=True, eq=False)
class QuasiStationaryDist:
    """Empirical law of the SRP statistic conditioned on no alarm.

    ``support`` holds values of R on [0, B). When ``states`` holds the
    particles' chain states (aligned with ``support``) and ``joint`` is set, a
    randomized start takes the statistic and the chain state from the same
    particle; otherwise only R is drawn and the chain starts fresh.
    """

    support: np.ndarray
    weights: np.ndarray
    log_b: float
    particles: int
    burn_in: int
    seed: object = None
    absorption_rate: float = math.nan
    states: ChainState = field(default=None, repr=False)
    log_r: np.ndarray = field(default=None, repr=False)
    joint: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValidationError("quasi-stationary weights must be nonnegative and sum to 1")
        object.__setattr__(self, "_cum", np.cumsum(w))

    @classmethod
    def point_mass(cls, r0, log_b):
        return cls(np.array([float(r0)]), np.array([1.0]), log_b, 1, 0)

    def mean(self):
        return float(np.dot(self.support, self.weights))

    @property
    def uses_states(self):
        return self.joint and self.states is not None

    def draw_index(self, rng, n):
        """``n`` support indices drawn with one uniform each from ``rng``."""
        u = rng.random(n)
        return np.minimum(np.searchsorted(self._cum, u, side="right"), len(self.support) - 1)

    def draw(self, rng, n):
        return self.support[self.draw_index(rng, n)]

    def log_support(self):
        if self.log_r is not None:
            return self.log_r
        with np.errstate(divide="ignore"):
            return np.log(self.support)

    def to_dict(self):
        out = {"log_b": self.log_b, "particles": self.particles, "burn_in": self.burn_in,
               "seed": self.seed, "absorption_rate": self.absorption_rate, "joint": self.joint,
               "support": self.support.tolist(), "weights": self.weights.tolist()}
        if self.states is not None:
            st = self.states
            out["states"] = {"x": st.x.tolist(), "xi": st.xi.tolist(), "u0": st.u0.tolist(),
                             "u1": st.u1.tolist(), "fresh": st.fresh.tolist()}
            out["log_r"] = self.log_r.tolist()
        return out

    @classmethod
    def from_dict(cls, spec):
        try:
            states, log_r = None, None
            if "states" in spec:
                st = spec["states"]
                states = ChainState(np.asarray(st["x"], dtype=np.int64),
                                    np.asarray(st["xi"], float), np.asarray(st["u0"], float),
                                    np.asarray(st["u1"], float), np.asarray(st["fresh"], bool))
                log_r = np.asarray(spec["log_r"], float)
            return cls(np.asarray(spec["support"], float), np.asarray(spec["weights"], float),
                       spec["log_b"], spec["particles"], spec["burn_in"], spec.get("seed"),
                       spec.get("absorption_rate", math.nan), states, log_r,
                       spec.get("joint", True))
        except KeyError as exc:
            raise ValidationError(f"quasi-stationary file is missing {exc.args[0]!r}") from None


def _push(pre, post, state, log_r, rng):
    n = len(state)
    state, sigma = advance(pre, post, pre, state, rng.random(n), rng.standard_normal(n))
    return state, sigma + _log1p_exp(log_r)


def estimate_quasi_stationary(pre, post, log_b, particles=10_000, steps=None, seed=0):
    """Particle approximation of the quasi-stationary law of the SRP statistic.

    Particles run the SRP recursion from zero under the pre-change model.
    Each particle that reaches the threshold is replaced by a copy of a
    uniformly chosen survivor, so the cloud tracks the law conditioned on no
    alarm. The final snapshot after ``steps`` (default ``10 * B``) is returned.
    """
    log_b = check_log_threshold(log_b)
    if particles < 2:
        raise ValidationError("need at least two particles")
    if steps is None:
        steps = int(math.ceil(10 * math.exp(log_b)))
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, 2)))
    state = ChainState.virtual(pre, post, particles)
    log_r = np.full(particles, -math.inf)
    absorbed = 0
    tail = max(steps // 2, 1)
    for t in range(steps):
        state, log_r = _push(pre, post, state, log_r, rng)
        hit = crossed(log_r, log_b)
        k = int(hit.sum())
        if k:
            if k == particles:
                raise NumericDegeneracyError(
                    f"all {particles} particles crossed the threshold in one step; "
                    "log_b is too low")
            donors = np.flatnonzero(~hit)[rng.integers(0, particles - k, size=k)]
            dest = np.flatnonzero(hit)
            state = _assign(state, dest, donors)
            log_r[dest] = log_r[donors]
            if t >= steps - tail:
                absorbed += k
    support = np.exp(log_r)
    weights = np.full(particles, 1.0 / particles)
    return QuasiStationaryDist(support, weights, log_b, particles, steps, seed,
                               absorbed / (tail * particles), state, log_r.copy())


def _assign(state, dest, src):
    s = state.copy()
    for f in ("x", "xi", "u0", "u1", "fresh"):
        getattr(s, f)[dest] = getattr(state, f)[src]
    return s


@dataclass(frozen=True)
class PushForwardCheck:
    ks_distance: float
    survivors: int
    particles: int


def push_forward_ks(psi, pre, post, seed=1):
    """KS distance between the particle law and its one-step push-forward given no alarm."""
    if psi.states is None:
        raise ValidationError("push-forward check needs the particle states")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, 3)))
    _, log_r = _push(pre, post, psi.states, psi.log_r, rng)
    keep = ~crossed(log_r, psi.log_b)
    d = stats.ks_2samp(psi.log_r, log_r[keep]).statistic
    return PushForwardCheck(float(d), int(keep.sum()), len(keep))


# batched engine shared with the harness


@dataclass(frozen=True)
class DetectorConfig:
    rule: str
    log_b: float
    p: float = None
    init: str = "zero"
    psi: QuasiStationaryDist = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValidationError(f"rule must be one of {RULES}, got {self.rule!r}")
        check_log_threshold(self.log_b)
        if self.init not in INITS:
            raise ValidationError(f"init must be one of {INITS}, got {self.init!r}")
        if self.rule == "shiryaev":
            if self.p is None or not 0 < self.p <= 1:
                raise ValidationError("rule 'shiryaev' needs p in (0, 1]")
        if self.init == "quasi_stationary":
            if self.rule != "srp":
                raise ValidationError("quasi-stationary start applies to rule 'srp' only")
            if self.psi is None:
                raise ValidationError("init 'quasi_stationary' needs a QuasiStationaryDist")

    def with_log_b(self, log_b):
        return replace(self, log_b=float(log_b))

    def to_dict(self):
        out = {"rule": self.rule, "log_b": self.log_b, "init": self.init}
        if self.p is not None:
            out["p"] = self.p
        return out

    @classmethod
    def from_dict(cls, spec, psi=None):
        try:
            return cls(spec["rule"], float(spec["log_b"]), spec.get("p"),
                       spec.get("init", "zero"), psi)
        except KeyError as exc:
            raise ValidationError(f"detector config is missing field {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path, psi=None):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), psi)


def initial_statistic(config, trials, seed):
    """Starting statistic per trial; randomized starts use the trial's aux stream."""
    return initial_condition(config, trials, seed, None)[0]


def initial_condition(config, trials, seed, state):
    """Starting statistic and chain state per trial.

    Randomized starts draw a particle index from the trial's aux stream; with a
    joint quasi-stationary law the chain state comes from the same particle.
    """
    n = len(trials)
    if config.rule == "cusum":
        return np.zeros(n), state
    if config.init == "quasi_stationary":
        psi = config.psi
        idx = np.array([psi.draw_index(_streams.trial_rng(seed, t, 1), 1)[0] for t in trials],
                       dtype=np.int64)
        if psi.uses_states and state is not None:
            state = psi.states.take(idx)
        return psi.log_support()[idx], state
    return np.full(n, -math.inf), state


def update_statistic(config, stat, sigma):
    if config.rule == "cusum":
        return np.maximum(stat, 0.0) + sigma
    out = sigma + _log1p_exp(stat)
    if config.rule == "shiryaev":
        out = out + _neg_log_q(config.p)
    return out


@dataclass(frozen=True, eq=False)
class StopBatch:
    """Per-trial outcome of a batch run. ``stop`` is 0 for censored trials."""

    trials: np.ndarray
    stop: np.ndarray
    overshoot: np.ndarray
    final_stat: np.ndarray

    @property
    def censored(self):
        return self.stop == 0


def simulate_stopping(scenario, config, trials, seed, cap):
    """Run independent trials in lockstep until each alarms or reaches ``cap``.

    Trial ``i`` draws its path from ``trial_rng(seed, i)`` in fixed blocks, so
    its outcome does not depend on which other trials share the batch.
    """
    if cap < 1:
        raise ValidationError("cap must be >= 1")
    trials = np.asarray(trials, dtype=np.int64)
    n = len(trials)
    pre, post = scenario.pre, scenario.post
    bank = _streams.trial_bank(seed, trials)
    stat, state = initial_condition(config, trials, seed, ChainState.virtual(pre, post, n))
    alive = np.arange(n)
    stop = np.zeros(n, dtype=np.int64)
    over = np.full(n, np.nan)
    final = np.full(n, np.nan)
    for t in range(int(cap)):
        U, Z = bank.next()
        state, sigma = advance(pre, post, scenario.regime(t), state, U, Z)
        stat = update_statistic(config, stat, sigma)
        hit = crossed(stat, config.log_b)
        if hit.any():
            idx = alive[hit]
            stop[idx] = t + 1
            over[idx] = stat[hit] - config.log_b
            final[idx] = stat[hit]
            keep = ~hit
            alive, stat = alive[keep], stat[keep]
            state = state.take(keep)
            bank.keep(keep)
            if not len(alive):
                break
    final[alive] = stat
    return StopBatch(trials, stop, over, final)


@dataclass(frozen=True)
class AlarmReport:
    stopping_time: int
    censored: bool
    overshoot: float
    rule: str
    log_b: float
    seed: object = None
    trial: int = 0

    def csv_row(self):
        n = "" if self.censored else self.stopping_time
        over = "" if self.censored else repr(float(self.overshoot))
        return [self.trial, self.rule, repr(self.log_b), n, int(self.censored), over, self.seed]


def run_to_alarm(scenario, config, cap, seed, trial=0):
    """Single-trial run on ``trial_rng(seed, trial)``; censored at ``cap``."""
    res = simulate_stopping(scenario, config, [trial], seed, cap)
    cens = bool(res.censored[0])
    return AlarmReport(int(cap if cens else res.stop[0]), cens, float(res.overshoot[0]),
                       config.rule, config.log_b, seed, int(trial))


# estimator-style wrappers


class LikelihoodRatioTransformer(TransformerMixin, BaseEstimator):
    """Map observation paths (rows) to their log-LR increment paths."""

    def __init__(self, pre=None, post=None):
        self.pre = pre
        self.post = post

    def fit(self, X=None, y=None):
        if self.pre is None or self.post is None:
            raise ValidationError("pre and post models are required")
        if self.pre.d != self.post.d:
            raise ValidationError(f"pre has d={self.pre.d} but post has d={self.post.d}")
        self.d_ = self.pre.d
        return self

    def transform(self, X):
        check_is_fitted(self, "d_")
        X = check_observations(X)
        state = ChainState.virtual(self.pre, self.post, X.shape[0])
        out = np.empty_like(X)
        for t in range(X.shape[1]):
            state, out[:, t] = feed(self.pre, self.post, state, X[:, t])
        return out


class _RuleDetector(BaseEstimator):
    rule = None

    def _config(self):
        raise NotImplementedError

    def fit(self, X=None, y=None):
        self.lr_ = LikelihoodRatioTransformer(self.pre, self.post).fit()
        self.config_ = self._config()
        return self

    def _start(self, n):
        return initial_statistic(self.config_, np.arange(n), self.seed)

    def transform(self, X):
        """Statistic path (log scale for SRP/Shiryaev, G_n for CUSUM), frozen after alarm."""
        check_is_fitted(self, "config_")
        sig = self.lr_.transform(X)
        stat = self._start(sig.shape[0])
        out = np.empty_like(sig)
        done = np.zeros(sig.shape[0], dtype=bool)
        for t in range(sig.shape[1]):
            stat = np.where(done, stat, update_statistic(self.config_, stat, sig[:, t]))
            done |= crossed(stat, self.config_.log_b)
            out[:, t] = stat
        return out

    def predict(self, X):
        """Alarm step per path (1-based count of observations), 0 when no alarm."""
        path = self.transform(X)
        hit = crossed(path, self.config_.log_b)
        return np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, 0)


class SRPDetector(_RuleDetector):
    """Shiryaev-Roberts(-Pollak) detector.

    ``psi`` set to a QuasiStationaryDist gives the randomized start; draws are
    taken from the aux stream of ``seed`` per path index.
    """

    def __init__(self, pre=None, post=None, log_b=5.0, psi=None, seed=0):
        self.pre = pre
        self.post = post
        self.log_b = log_b
        self.psi = psi
        self.seed = seed

    def _config(self):
        init = "zero" if self.psi is None else "quasi_stationary"
        return DetectorConfig("srp", self.log_b, init=init, psi=self.psi)


class CusumDetector(_RuleDetector):
    def __init__(self, pre=None, post=None, log_b=5.0, seed=0):
        self.pre = pre
        self.post = post
        self.log_b = log_b
        self.seed = seed

    def _config(self):
        return DetectorConfig("cusum", self.log_b)


class ShiryaevDetector(_RuleDetector):
    def __init__(self, pre=None, post=None, log_b=5.0, p=0.01, seed=0):
        self.pre = pre
        self.post = post
        self.log_b = log_b
        self.p = p
        self.seed = seed

    def _config(self):
        return DetectorConfig("shiryaev", self.log_b, p=self.p)

    def posterior(self, X):
        return expit(self.transform(X) + math.log(self.p))


def make_config(rule, log_b, p=None, psi=None):
    init = "quasi_stationary" if psi is not None else "zero"
    return DetectorConfig(rule, log_b, p, init, psi)


__all__ = [
    "AlarmReport", "CusumDetector", "CusumState", "DetectorConfig",
    "LikelihoodRatioTransformer", "QuasiStationaryDist", "SRPDetector", "ShiryaevDetector",
    "ShiryaevState", "SrpState", "cusum_init", "cusum_step", "estimate_quasi_stationary",
    "push_forward_ks", "run_to_alarm", "shiryaev_init", "shiryaev_step", "simulate_stopping",
    "srp_init", "srp_step",
]
