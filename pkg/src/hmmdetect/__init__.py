"""Sequential change detection for hidden Markov models.

Shiryaev-Roberts(-Pollak), CUSUM and Shiryaev stopping rules driven by the
log-likelihood ratio of two HMMs, a Monte Carlo harness for their operating
characteristics and simulation estimators for the constants of the
second-order delay approximation.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

from .detectors import (AlarmReport, CusumDetector, DetectorConfig, LikelihoodRatioTransformer,
                        QuasiStationaryDist, ShiryaevDetector, SRPDetector,
                        estimate_quasi_stationary, run_to_alarm)
from .harness import (McEstimate, calibrate_threshold, compare_rules, estimate_arl,
                      estimate_delay)
from .hmm import ChangeScenario, EmissionSpec, HmmParams, sample_changed_path
from .likelihood import brute_force_likelihood, filter_step, init_filter
from .renewal import (approx_delay, estimate_constants, estimate_delta, estimate_eta,
                      estimate_kl, simulate_ladder)

__all__ = [
    "AlarmReport", "ChangeScenario", "CusumDetector", "DetectorConfig", "EmissionSpec",
    "HmmParams", "LikelihoodRatioTransformer", "McEstimate", "QuasiStationaryDist",
    "SRPDetector", "ShiryaevDetector", "approx_delay", "brute_force_likelihood",
    "calibrate_threshold", "compare_rules", "estimate_arl", "estimate_constants",
    "estimate_delay", "estimate_delta", "estimate_eta", "estimate_kl",
    "estimate_quasi_stationary", "filter_step", "init_filter", "run_to_alarm",
    "sample_changed_path", "simulate_ladder",
]
