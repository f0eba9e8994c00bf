"""Input validation helpers shared by the estimators and the numerical core."""

import numbers

import numpy as np


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_count(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_states(x, dim, name="x"):
    """Return ``x`` as a float array of shape (N, dim).

    A 1-D input is read as a single state when its length equals ``dim``
    and otherwise (only for ``dim == 1``) as N scalar states.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if arr.shape[0] == dim:
            arr = arr.reshape(1, dim)
        elif dim == 1:
            arr = arr.reshape(-1, 1)
        else:
            raise ValueError(f"{name} has length {arr.shape[0]}, expected dimension {dim}")
    elif arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (N, {dim}), got {arr.shape}")
    return arr


def check_times(t, n, horizon=None, name="t"):
    """Broadcast ``t`` to a float vector of length ``n`` and range-check it."""
    arr = np.asarray(t, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    arr = arr.reshape(-1)
    if arr.shape[0] != n:
        raise ValueError(f"{name} has {arr.shape[0]} entries, expected {n}")
    if horizon is not None:
        tol = 1e-12 * max(1.0, horizon)
        if np.any(arr < -tol) or np.any(arr > horizon + tol):
            raise ValueError(f"{name} must lie in [0, {horizon}]")
    return arr


def check_time_state_rows(X, dim, horizon=None):
    """Split rows ``[t, x_1, ..., x_d]`` into a time vector and a state matrix."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim + 1:
        raise ValueError(f"expected rows of [t, x_1..x_{dim}] with shape (N, {dim + 1}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains non-finite values")
    t = check_times(arr[:, 0], arr.shape[0], horizon)
    return t, arr[:, 1:]


def check_square_matrix(a, dim, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0 and dim == 1:
        arr = arr.reshape(1, 1)
    if arr.shape != (dim, dim):
        raise ValueError(f"{name} must have shape ({dim}, {dim}), got {arr.shape}")
    return arr
