"""Hidden Markov models with Gaussian (optionally autoregressive) emissions.

A model pairs a finite hidden chain with a per-state emission law
``f(xi; state | xi_prev)``. The hidden state moves first, then the new
observation is drawn given the new state and the previous observation.

Change-point indexing: ``omega = k`` means the k-th observation, ``xi_{k-1}``,
is the first one generated by the post-change model. ``omega = 1`` therefore
yields a path that is post-change throughout, and ``omega = inf`` never
changes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _streams
from .exceptions import ValidationError
from .validation import check_irreducible, check_stochastic_matrix

FAMILIES = ("gaussian", "gaussian_ar1")
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class EmissionSpec:
    """Per-state emission parameters.

    ``gaussian_ar1`` has conditional mean ``mean[x] + ar[x] * xi_prev``.
    """

    family: str
    mean: tuple
    stdev: tuple
    ar: tuple = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"emission family must be one of {FAMILIES}, got {self.family!r}")
        mean = tuple(float(v) for v in self.mean)
        stdev = tuple(float(v) for v in self.stdev)
        ar = tuple(0.0 for _ in mean) if self.ar is None else tuple(float(v) for v in self.ar)
        if not (len(mean) == len(stdev) == len(ar)) or not mean:
            raise ValidationError("emission mean, stdev and ar must have the same nonzero length")
        if any(not math.isfinite(s) or s <= 0 for s in stdev):
            raise ValidationError("emission stdev must be finite and > 0 for every state")
        if any(not math.isfinite(v) for v in mean + ar):
            raise ValidationError("emission parameters must be finite")
        if self.family == "gaussian" and any(a != 0 for a in ar):
            raise ValidationError("family 'gaussian' requires ar == 0 for all states")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stdev", stdev)
        object.__setattr__(self, "ar", ar)
        object.__setattr__(self, "_mean", np.array(mean))
        object.__setattr__(self, "_stdev", np.array(stdev))
        object.__setattr__(self, "_ar", np.array(ar))

    @property
    def d(self):
        return len(self.mean)

    def log_density(self, xi, xi_prev):
        """Log densities of ``xi`` under every state, shape ``xi.shape + (d,)``."""
        xi = np.asarray(xi, dtype=float)[..., None]
        xi_prev = np.asarray(xi_prev, dtype=float)[..., None]
        z = (xi - self._mean - self._ar * xi_prev) / self._stdev
        return -0.5 * z * z - np.log(self._stdev) - _LOG_SQRT_2PI

    def draw(self, states, xi_prev, Z):
        """Observations for given states from standard normal variates ``Z``."""
        return self._mean[states] + self._ar[states] * xi_prev + self._stdev[states] * Z

    def to_dict(self):
        return {"family": self.family, "mean": list(self.mean), "ar": list(self.ar),
                "stdev": list(self.stdev)}


def stationary_distribution(trans):
    """Stationary vector of an irreducible row-stochastic matrix.

    Solves ``pi (P - I) = 0`` with the normalization row appended, by least
    squares on the (d+1) x d system.

    >>> stationary_distribution([[0.9, 0.1], [0.2, 0.8]]).round(12)
    array([0.66666667, 0.33333333])
    """
    P = check_stochastic_matrix(trans)
    check_irreducible(P)
    d = P.shape[0]
    A = np.vstack([P.T - np.eye(d), np.ones((1, d))])
    rhs = np.zeros(d + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.abs(pi @ P - pi).sum() > 1e-10:
        raise ValidationError("stationary solve did not converge to 1e-10")
    return pi


@dataclass(frozen=True)
class HmmParams:
    """One parameterized HMM: transition matrix, emissions, stationary vector."""

    trans: tuple
    emission: EmissionSpec
    stationary: tuple = field(default=None)

    def __post_init__(self):
        P = check_stochastic_matrix(self.trans)
        check_irreducible(P)
        if self.emission.d != P.shape[0]:
            raise ValidationError(
                f"emission has {self.emission.d} states but trans is {P.shape[0]}x{P.shape[0]}"
            )
        if self.stationary is None:
            pi = stationary_distribution(P)
        else:
            pi = np.asarray(self.stationary, dtype=float)
            if pi.shape != (P.shape[0],) or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-10:
                raise ValidationError("stationary must be a probability vector of length d")
            if np.abs(pi @ P - pi).sum() > 1e-10:
                raise ValidationError("stationary does not satisfy pi P = pi within 1e-10")
        object.__setattr__(self, "trans", tuple(tuple(float(v) for v in row) for row in P))
        object.__setattr__(self, "stationary", tuple(float(v) for v in pi))
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "_cum", np.cumsum(P, axis=1)[:, :-1])
        object.__setattr__(self, "_pi_cum", np.cumsum(pi)[:-1])

    @property
    def d(self):
        return self.P.shape[0]

    @classmethod
    def gaussian(cls, trans, mean, stdev, ar=None):
        family = "gaussian" if ar is None else "gaussian_ar1"
        return cls(trans, EmissionSpec(family, mean, stdev, ar))

    def next_states(self, states, U):
        """Inverse-CDF transition; ``states == -1`` draws from the stationary vector."""
        states = np.asarray(states)
        cum = np.where((states < 0)[:, None], self._pi_cum, self._cum[np.maximum(states, 0)])
        return (U[:, None] >= cum).sum(axis=1)

    def to_dict(self):
        return {"d": self.d, "trans": [list(r) for r in self.trans],
                "emission": self.emission.to_dict(), "stationary": list(self.stationary)}

    @classmethod
    def from_dict(cls, spec):
        try:
            d = int(spec["d"])
            em = spec["emission"]
            emission = EmissionSpec(em["family"], em["mean"], em["stdev"], em.get("ar"))
            params = cls(spec["trans"], emission, spec.get("stationary"))
        except KeyError as exc:
            raise ValidationError(f"model spec is missing field {exc.args[0]!r}") from None
        except TypeError as exc:
            raise ValidationError(f"model spec has a malformed field: {exc}") from None
        if params.d != d:
            raise ValidationError(f"field 'd' is {d} but trans is {params.d}x{params.d}")
        return params


def emission_density(spec, state, xi, xi_prev=0.0):
    """Density ``f(xi; state | xi_prev)``; ``state`` is 0-based."""
    if not 0 <= state < spec.d:
        raise ValidationError(f"state index {state} out of range for d={spec.d}")
    return float(np.exp(spec.log_density(xi, xi_prev)[state]))


def normalize_omega(omega):
    if omega is None or omega == "inf" or omega == math.inf:
        return math.inf
    omega = int(omega)
    if omega < 0:
        raise ValidationError(f"change point must be >= 0 or inf, got {omega}")
    return max(omega, 1)


@dataclass(frozen=True)
class ChangeScenario:
    pre: HmmParams
    post: HmmParams
    omega: float = math.inf

    def __post_init__(self):
        if self.pre.d != self.post.d:
            raise ValidationError(f"pre has d={self.pre.d} but post has d={self.post.d}")
        object.__setattr__(self, "omega", normalize_omega(self.omega))

    def regime(self, t):
        """Model generating observation ``xi_t`` (0-based index)."""
        return self.post if t >= self.omega - 1 else self.pre

    def with_omega(self, omega):
        return ChangeScenario(self.pre, self.post, omega)

    def to_dict(self):
        omega = "inf" if math.isinf(self.omega) else int(self.omega)
        return {"pre": self.pre.to_dict(), "post": self.post.to_dict(), "omega": omega}

    @classmethod
    def from_dict(cls, spec):
        try:
            return cls(HmmParams.from_dict(spec["pre"]), HmmParams.from_dict(spec["post"]),
                       spec.get("omega", "inf"))
        except KeyError as exc:
            raise ValidationError(f"scenario spec is missing field {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class SamplePath:
    observations: np.ndarray
    hidden: np.ndarray
    omega: float
    seed: object = None


def sample_step(params, state, xi_prev, rng):
    """One transition then one emission. Pass ``state=-1`` to draw from stationary."""
    rng = _streams.as_generator(rng)
    nxt = int(params.next_states(np.array([state]), np.array([rng.random()]))[0])
    xi = float(params.emission.draw(nxt, xi_prev, rng.standard_normal()))
    return nxt, xi


class PathSampler:
    """Lockstep sampler for a batch of change-scenario paths.

    Hidden states start at -1 (not yet drawn); the first step draws ``X_0``
    from the stationary vector of whichever model generates ``xi_0``.
    """

    def __init__(self, scenario, n):
        self.scenario = scenario
        self.t = 0
        self.x = np.full(n, -1)
        self.xi = np.zeros(n)

    def step(self, U, Z):
        params = self.scenario.regime(self.t)
        x = params.next_states(self.x, U)
        xi = params.emission.draw(x, self.xi, Z)
        self.x, self.xi = x, xi
        self.t += 1
        return x, xi

    def keep(self, mask):
        self.x = self.x[mask]
        self.xi = self.xi[mask]


def sample_changed_path(scenario, horizon, rng, seed=None):
    """Draw ``horizon`` observations ``xi_0 .. xi_{horizon-1}`` from a change scenario."""
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    bank = _streams.NoiseBank([_streams.as_generator(rng)])
    sampler = PathSampler(scenario, 1)
    xs = np.empty(horizon)
    hs = np.empty(horizon, dtype=int)
    for t in range(horizon):
        U, Z = bank.next()
        x, xi = sampler.step(U, Z)
        hs[t], xs[t] = x[0], xi[0]
    return SamplePath(xs, hs, scenario.omega, seed)
