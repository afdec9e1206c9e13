"""Central finite differences, the oracle for every gradient test."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import NonFiniteError


def finite_difference_gradient(f: Callable[[np.ndarray], float], theta, eps: float = 1e-5,
                               indices: Iterable[tuple[int, ...]] | None = None) -> np.ndarray:
    """Estimate df/dtheta by (f(theta + eps) - f(theta - eps)) / 2 eps per coordinate.

    ``theta`` is perturbed in place and restored. When ``indices`` is given,
    only those coordinates are estimated; the rest of the returned array is 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.asarray(theta)
    out = np.zeros(theta.shape, dtype=np.float64)
    coords = np.ndindex(theta.shape) if indices is None else indices
    for idx in coords:
        idx = tuple(idx)
        orig = theta[idx].copy()
        theta[idx] = orig + eps
        fp = float(f(theta))
        theta[idx] = orig - eps
        fm = float(f(theta))
        theta[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite objective while differencing coordinate {idx}")
        out[idx] = (fp - fm) / (2.0 * eps)
    return out


def relative_error(analytic, numeric, floor: float = 1e-12) -> np.ndarray:
    """|a - n| / max(|a|, |n|), with both-tiny entries reported as 0."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(n))
    return np.where(denom > floor, np.abs(a - n) / np.maximum(denom, floor), 0.0)
