"""Reference model pairs used in the tests, the docs and the CLI examples."""

from .hmm import ChangeScenario, HmmParams

REF_TRANS = [[0.9, 0.1], [0.2, 0.8]]


def gaussian_shift(mu0=0.0, mu1=1.0, sigma=1.0):
    """One-state pair ``N(mu0, sigma^2) -> N(mu1, sigma^2)``; K10 = (mu1 - mu0)^2 / (2 sigma^2)."""
    return (HmmParams.gaussian([[1.0]], [mu0], [sigma]),
            HmmParams.gaussian([[1.0]], [mu1], [sigma]))


def two_state_pair():
    """Persistent two-state chain whose state means shift up by one after the change."""
    return (HmmParams.gaussian(REF_TRANS, [0.0, 1.0], [1.0, 1.0]),
            HmmParams.gaussian(REF_TRANS, [1.0, 2.0], [1.0, 1.0]))


def two_state_ar_pair():
    """Two-state pair with autoregressive emissions and a change in the transition law."""
    return (HmmParams.gaussian(REF_TRANS, [0.0, 1.0], [1.0, 1.5], ar=[0.3, -0.2]),
            HmmParams.gaussian([[0.6, 0.4], [0.3, 0.7]], [0.5, 2.0], [1.0, 1.5], ar=[0.3, -0.2]))


def scenario(pair, omega=float("inf")):
    return ChangeScenario(pair[0], pair[1], omega)
