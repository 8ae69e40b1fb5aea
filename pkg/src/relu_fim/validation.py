"""Small argument checks shared by the numerical modules and the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import DenseCapError, DimensionError, DomainError

DEFAULT_DENSE_CAP = 20000


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise DomainError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise DomainError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_positive_real(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{name} must be a real number, got {value!r}") from None
    if not np.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be finite and > 0, got {value}")
    return value


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral):
        raise DomainError(f"seed must be an integer, got {seed!r}")
    if not 0 <= seed < 2**64:
        raise DomainError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return int(seed)


def check_dense_cap(p: int, cap: int | None) -> None:
    cap = DEFAULT_DENSE_CAP if cap is None else cap
    if p > cap:
        gb = 8.0 * p * p / 1e9
        raise DenseCapError(
            f"dense {p}x{p} matrix (~{gb:.1f} GB) exceeds dense_cap={cap}; "
            "use the matrix-free operators with topk_spectrum instead"
        )


def check_symmetric(values: np.ndarray, name: str = "matrix", atol: float = 0.0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{name} has non-finite entries")
    if atol == 0.0:
        symmetric = np.array_equal(values, values.T)
    else:
        symmetric = np.max(np.abs(values - values.T), initial=0.0) <= atol
    if not symmetric:
        raise DomainError(f"{name} is not symmetric")
    return values


def symmetrize_upper(values: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle so the result is exactly symmetric."""
    upper = np.triu(values)
    return upper + np.triu(values, 1).T
