"""Input validation helpers.

Small check functions in the spirit of ``sklearn.utils.validation``: each one
either returns a coerced ``numpy`` array or raises :class:`ValidationError`
with a message naming the offending argument.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError


def check_array(a, name: str = "array", dtype=float) -> np.ndarray:
    """Coerce to an ndarray of the given dtype, rejecting non-finite entries."""
    arr = np.asarray(a, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def check_square(a, name: str = "matrix") -> np.ndarray:
    arr = check_array(a, name)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_symmetric(a, tol: float = 1e-8, name: str = "matrix") -> np.ndarray:
    """Check symmetry within ``tol`` (scaled by the matrix magnitude) and
    return the exactly symmetrized matrix ``(A + A.T) / 2``."""
    arr = check_square(a, name)
    scale = max(1.0, float(np.abs(arr).max())) if arr.size else 1.0
    gap = float(np.abs(arr - arr.T).max()) if arr.size else 0.0
    if gap > tol * scale:
        raise ValidationError(
            f"{name} is not symmetric: max |A - A.T| = {gap:.3e} exceeds tolerance"
        )
    return (arr + arr.T) / 2.0


def check_distance_matrix(d, name: str = "distances") -> np.ndarray:
    """Symmetric, nonnegative, zero-diagonal matrix of pairwise distances."""
    arr = check_symmetric(d, name=name)
    if arr.size and arr.min() < 0:
        raise ValidationError(f"{name} has negative entries")
    if arr.size and np.abs(np.diag(arr)).max() > 1e-12:
        raise ValidationError(f"{name} has a nonzero diagonal")
    return arr


def check_histogram(h, size: int | None = None, name: str = "histogram",
                    tol: float = 1e-12) -> np.ndarray:
    """Nonnegative vector summing to one within ``tol``."""
    arr = check_array(h, name).ravel()
    if size is not None and arr.shape[0] != size:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {size}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    if arr.min() < 0:
        raise ValidationError(f"{name} has negative mass")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"{name} sums to {total!r}, expected 1 within {tol}")
    return arr


def check_positive(value: float, name: str = "value") -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_probability(value: float, name: str = "value") -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")
    return value
