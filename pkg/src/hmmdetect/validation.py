"""Input validation helpers shared by the estimators and the CLI."""

import numpy as np
from scipy.sparse.csgraph import connected_components

from .exceptions import ValidationError

ROW_SUM_TOL = 1e-12


def check_stochastic_matrix(trans, name="trans"):
    """Return ``trans`` as a float array after checking it is row-stochastic.

    Raises ValidationError naming the first offending row.
    """
    P = np.asarray(trans, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty square matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValidationError(f"{name} contains non-finite entries")
    for i, row in enumerate(P):
        if np.any(row < 0):
            raise ValidationError(f"{name} row {i} has a negative entry")
        dev = abs(row.sum() - 1.0)
        if dev > ROW_SUM_TOL:
            raise ValidationError(
                f"{name} row {i} sums to {row.sum():.15g} (deviation {dev:.3g} > {ROW_SUM_TOL:g})"
            )
    return P


def communicating_classes(P):
    """Strongly connected components of the transition graph, as sorted lists."""
    n, labels = connected_components(np.asarray(P) > 0, directed=True, connection="strong")
    return [sorted(np.flatnonzero(labels == k).tolist()) for k in range(n)]


def check_irreducible(P, name="trans"):
    classes = communicating_classes(P)
    if len(classes) > 1:
        raise ValidationError(f"{name} is reducible; communicating classes: {classes}")


def check_probability_vector(v, d=None, tol=1e-10, name="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or (d is not None and v.shape[0] != d):
        raise ValidationError(f"{name} must be a length-{d} vector")
    if np.any(v < 0) or abs(v.sum() - 1.0) > tol:
        raise ValidationError(f"{name} must be nonnegative and sum to 1")
    return v


def check_observations(X):
    """Coerce observation data to a finite 2-D float array (paths x time).

    A single 1-D sequence is treated as one path.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValidationError(f"observations must be 1-D or 2-D, got {X.ndim}-D")
    if X.shape[1] == 0:
        raise ValidationError("observation paths must contain at least one value")
    if not np.all(np.isfinite(X)):
        raise ValidationError("observations must be finite")
    return X


def check_log_threshold(log_b):
    log_b = float(log_b)
    if not np.isfinite(log_b) or log_b <= 0:
        raise ValidationError(f"log threshold must be finite and positive, got {log_b}")
    return log_b
