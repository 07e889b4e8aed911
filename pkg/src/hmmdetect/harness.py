"""Monte Carlo operating characteristics: ARL to false alarm, conditional delay,
threshold calibration and side-by-side rule comparison.

Trials are split into fixed-size chunks (``CHUNK`` trials each). A chunk is
always the same set of trial indices, whatever the thread count, and every
trial draws from its own counter-derived stream, so results are bit-identical
across schedules.
"""

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .detectors import DetectorConfig, StopBatch, simulate_stopping
from .exceptions import EstimationError, ValidationError
from .hmm import ChangeScenario

CHUNK = 2048
CAP_FACTOR = 50


@dataclass(frozen=True)
class McEstimate:
    """A Monte Carlo mean with its standard error and trial accounting.

    ``lower_bound`` is set when censored trials entered the mean at their cap.
    ``excluded`` counts trials dropped by conditioning (false alarms before
    the change in a delay run).
    """

    mean: float
    std_error: float
    trials: int
    censored: int
    seed: object
    wall_time: float
    lower_bound: bool = False
    excluded: int = 0
    included: int = 0

    def as_dict(self):
        return {"mean": self.mean, "se": self.std_error, "trials": self.trials,
                "censored": self.censored, "excluded": self.excluded, "included": self.included,
                "lower_bound": self.lower_bound, "seed": self.seed}


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        raise EstimationError("no completed trials to average")
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def run_trials(scenario, config, trials, seed, cap, threads=1):
    """Outcomes for trials ``0..trials-1``, assembled in trial order."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    starts = range(0, int(trials), CHUNK)

    def work(start):
        return simulate_stopping(scenario, config, range(start, min(start + CHUNK, trials)),
                                 seed, cap)

    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return StopBatch(*(np.concatenate([getattr(p, f) for p in parts])
                       for f in ("trials", "stop", "overshoot", "final_stat")))


def default_cap(log_b):
    return int(math.ceil(CAP_FACTOR * math.exp(log_b)))


def _scenario(pre, post, omega):
    return ChangeScenario(pre, post if post is not None else pre, omega)


def arl_run(pre, post, config, trials, seed, cap=None, threads=1):
    """ARL estimate together with the per-trial outcomes."""
    cap = default_cap(config.log_b) if cap is None else int(cap)
    t0 = time.perf_counter()
    batch = run_trials(_scenario(pre, post, math.inf), config, trials, seed, cap, threads)
    cens = batch.censored
    if cens.all():
        raise EstimationError(f"all {trials} trials were censored at cap {cap}")
    values = np.where(cens, cap, batch.stop)
    mean, se = _mean_se(values)
    est = McEstimate(mean, se, int(trials), int(cens.sum()), seed,
                     time.perf_counter() - t0, bool(cens.any()), 0, int((~cens).sum()))
    return est, batch


def estimate_arl(pre, post, config, trials, seed, cap=None, threads=1):
    """Mean stopping time with no change. Censored trials count at the cap."""
    return arl_run(pre, post, config, trials, seed, cap, threads)[0]


def delay_run(scenario, config, trials, seed, cap=None, threads=1):
    k = scenario.omega
    if math.isinf(k):
        raise ValidationError("delay needs a finite change point")
    cap = int(k) + default_cap(config.log_b) if cap is None else int(cap)
    t0 = time.perf_counter()
    batch = run_trials(scenario, config, trials, seed, cap, threads)
    cens = batch.censored
    early = ~cens & (batch.stop < k)
    inc = ~cens & ~early
    if not inc.any():
        raise EstimationError(
            f"no trial alarmed at or after the change point ({int(early.sum())} early, "
            f"{int(cens.sum())} censored)")
    mean, se = _mean_se(batch.stop[inc] - k)
    est = McEstimate(mean, se, int(trials), int(cens.sum()), seed, time.perf_counter() - t0,
                     bool(cens.any()), int(early.sum()), int(inc.sum()))
    return est, batch


def estimate_delay(scenario, config, trials, seed, cap=None, threads=1):
    """Conditional delay ``E_k(N - k | N >= k)`` for change point ``k = scenario.omega``.

    With ``omega = k`` the first post-change observation is the k-th one, so
    ``N - k + 1`` post-change observations have been seen at the alarm.
    """
    return delay_run(scenario, config, trials, seed, cap, threads)[0]


def martingale_check(pre, post, log_b, trials, seed, cap=1000, threads=1):
    """Mean of ``R*_tau - tau`` for ``tau = N_b ^ cap`` under no change, zero start.

    Optional stopping makes this zero for any bounded stopping time.
    """
    cfg = DetectorConfig("srp", log_b)
    t0 = time.perf_counter()
    batch = run_trials(_scenario(pre, post, math.inf), cfg, trials, seed, cap, threads)
    tau = np.where(batch.censored, cap, batch.stop)
    mean, se = _mean_se(np.exp(batch.final_stat) - tau)
    return McEstimate(mean, se, int(trials), int(batch.censored.sum()), seed,
                      time.perf_counter() - t0)


@dataclass(frozen=True)
class CalibrationResult:
    log_b: float
    arl: McEstimate
    converged: bool
    probes: tuple = field(default=(), repr=False)


def calibrate_threshold(pre, post, rule, gamma, budget, seed, p=None, psi=None, tol=0.05,
                        max_probes=25, threads=1):
    """Threshold whose Monte Carlo ARL is within ``tol`` of ``gamma``.

    Every probe reuses the same trial streams, which makes the estimated ARL a
    nondecreasing step function of ``b``. The search starts at ``log gamma``,
    steps by ``log(gamma / ARL)`` (the ARL is roughly proportional to ``e^b``)
    and falls back to bisection inside the current bracket. It aims for a
    quarter of ``tol`` and returns the best probe seen, flagged unconverged
    when even that misses ``tol``.
    """
    if not gamma > 1:
        raise ValidationError("gamma must be > 1")
    cap = int(math.ceil(CAP_FACTOR * gamma))
    lo, hi = -math.inf, math.inf
    b = max(math.log(gamma), 1e-3)
    probes = []
    best = None
    for _ in range(max_probes):
        cfg = DetectorConfig(rule, b, p, "zero" if psi is None else "quasi_stationary", psi)
        est = estimate_arl(pre, post, cfg, budget, seed, cap, threads)
        probes.append((b, est))
        err = est.mean / gamma - 1
        if best is None or abs(err) < abs(best[1].mean / gamma - 1):
            best = (b, est)
        if abs(err) <= tol / 4:
            break
        if err < 0:
            lo = max(lo, b)
        else:
            hi = min(hi, b)
        nxt = b + math.log(gamma / max(est.mean, 1.0))
        if not lo < nxt < hi:
            nxt = (lo + hi) / 2 if math.isfinite(lo) and math.isfinite(hi) else nxt
        if not lo < nxt < hi or nxt <= 0 or abs(nxt - b) < 1e-9:
            break
        b = nxt
    b, est = best
    return CalibrationResult(b, est, abs(est.mean / gamma - 1) <= tol, tuple(probes))


@dataclass(frozen=True)
class ComparisonRow:
    scenario: str
    rule: str
    log_b: float
    gamma: float
    omega: object
    estimate: McEstimate


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple

    COLUMNS = ("scenario", "rule", "b", "gamma", "omega", "mean", "se", "trials", "censored",
               "excluded", "seed")

    def to_rows(self):
        for r in self.rows:
            e = r.estimate
            yield [r.scenario, r.rule, repr(r.log_b), repr(r.gamma), r.omega, repr(e.mean),
                   repr(e.std_error), e.trials, e.censored, e.excluded, e.seed]

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        w.writerows(self.to_rows())

    def delay(self, rule, omega, scenario=None):
        for r in self.rows:
            if r.rule == rule and r.omega == omega and scenario in (None, r.scenario):
                return r.estimate
        raise KeyError((rule, omega, scenario))


def compare_rules(scenarios, rules, gamma, trials, seed, omegas=(1, 10, 50), budget=None,
                  p=0.01, threads=1):
    """Calibrate each rule to ``gamma`` and tabulate delays at each change point.

    ``scenarios`` maps a name to a ChangeScenario (its own omega is ignored).
    ``rules`` may hold rule names or ready DetectorConfigs, which skip calibration.
    """
    budget = trials if budget is None else budget
    rows = []
    for name, sc in scenarios.items():
        for rule in rules:
            if isinstance(rule, DetectorConfig):
                cfg = rule
                arl = estimate_arl(sc.pre, sc.post, cfg, trials, seed, threads=threads)
            else:
                cal = calibrate_threshold(sc.pre, sc.post, rule, gamma, budget, seed,
                                          p=p if rule == "shiryaev" else None, threads=threads)
                cfg = DetectorConfig(rule, cal.log_b, p if rule == "shiryaev" else None)
                arl = cal.arl
            rows.append(ComparisonRow(name, cfg.rule, cfg.log_b, gamma, "inf", arl))
            for k in omegas:
                est = estimate_delay(sc.with_omega(k), cfg, trials, seed, threads=threads)
                rows.append(ComparisonRow(name, cfg.rule, cfg.log_b, gamma, k, est))
    return ComparisonTable(tuple(rows))
