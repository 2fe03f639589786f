"""Small input-checking helpers shared across the package."""

import numbers

import numpy as np


class ParameterError(ValueError):
    """A model or solver parameter is outside its admissible range."""


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ParameterError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ParameterError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ParameterError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_states(X, dim, name="X"):
    """Return ``X`` as a float array of shape (n, dim); a single state is promoted."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ParameterError(f"{name} must have shape (n, {dim}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ParameterError(f"{name} contains non-finite values")
    return X


def check_vector(x, dim, name="x"):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (dim,):
        raise ParameterError(f"{name} must have length {dim}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError(f"{name} contains non-finite values")
    return x
