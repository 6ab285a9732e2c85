"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np


def check_levels(levels):
    levels = tuple(int(m) for m in levels)
    if not levels:
        raise ValueError("levels must be non-empty")
    for m in levels:
        if m < 2:
            raise ValueError(f"every level count must be >= 2, got {m}")
    return levels


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite real, got {value!r}")
    return float(value)


def check_finite_array(x, name="input", ndim=None, allow_empty=True):
    """Return ``x`` as a float64 array, rejecting NaN/inf and wrong rank."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim not in np.atleast_1d(ndim):
        raise ValueError(f"{name} must have rank {ndim}, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_last_dim(x, size, name="input"):
    if x.ndim == 0 or x.shape[-1] != size:
        raise ValueError(
            f"{name} last dimension must be {size}, got shape {np.shape(x)}"
        )
    return x


def check_same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b
