"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import ContractViolation, DimensionError


def check_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_points(X, dim, name="X"):
    """Return ``X`` as an ``(n, dim)`` float array; a single vector is promoted."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    return arr


def check_scalar(value, name, *, low=None, high=None, include_low=True,
                 include_high=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ContractViolation(f"{name} must be a finite real number, got {value!r}")
    value = float(value)
    if low is not None:
        bad = value < low if include_low else value <= low
        if bad:
            op = ">=" if include_low else ">"
            raise ContractViolation(f"{name} must be {op} {low}, got {value}")
    if high is not None:
        bad = value > high if include_high else value >= high
        if bad:
            op = "<=" if include_high else "<"
            raise ContractViolation(f"{name} must be {op} {high}, got {value}")
    return value


def check_alpha(alpha):
    return check_scalar(alpha, "alpha", low=0.0, high=2.0,
                        include_low=False, include_high=False)


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
