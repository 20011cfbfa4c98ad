"""Bessel functions of the first kind and the scaled ratios used by the kernels.

The backstepping kernels only ever need ``I_m(z)/z**m`` and ``J_m(z)/z**m``
where ``z**2`` is a polynomial in the coordinates.  Both are entire functions
of ``s = z**2``::

    I_m(sqrt(s)) / sqrt(s)**m = sum_k (s/4)**k / (2**m k! (k+m)!)

and ``J_m`` is the same series evaluated at ``-s``.  :func:`bessel_ratio`
evaluates this single function of ``s`` on the whole real line, which also
gives the analytic continuation of the kernels past the diagonal ``y = x``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

_ORDERS = (0, 1, 2)

# |s| below this uses the power series; 40 terms reach double precision there
_SERIES_LIMIT = 16.0
_SERIES_TERMS = 40


def _check(order: int, z) -> np.ndarray:
    if order not in _ORDERS:
        raise ValueError(f"order must be one of {_ORDERS}, got {order!r}")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("argument must be finite")
    if np.any(z < 0):
        raise ValueError("argument must be non-negative")
    return z


def bessel_modified_first_kind(order: int, z):
    """Modified Bessel function ``I_order(z)`` for ``z >= 0``.

    Raises
    ------
    ValueError
        If ``order`` is not 0, 1 or 2, or if ``z`` is negative or not finite.
    """
    z = _check(order, z)
    out = special.iv(order, z)
    return float(out) if out.ndim == 0 else out


def bessel_first_kind(order: int, z):
    """Bessel function ``J_order(z)`` for ``z >= 0``; see :func:`bessel_modified_first_kind`."""
    z = _check(order, z)
    out = special.jv(order, z)
    return float(out) if out.ndim == 0 else out


def _series(m: int, s: np.ndarray) -> np.ndarray:
    term = np.full_like(s, 1.0 / (2.0**m * math.factorial(m)))
    total = term.copy()
    quarter = s / 4.0
    for k in range(_SERIES_TERMS):
        term = term * quarter / ((k + 1) * (k + 1 + m))
        total += term
    return total


def bessel_ratio(m: int, s):
    """Return ``I_m(sqrt(s))/sqrt(s)**m`` for ``s >= 0`` and ``J_m(sqrt(-s))/sqrt(-s)**m`` for ``s < 0``.

    The value at ``s = 0`` is ``1/(2**m m!)``.  Any non-negative integer
    order is accepted since the kernel derivatives need orders up to 4.
    """
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = np.abs(s) <= _SERIES_LIMIT
    out[small] = _series(m, s[small])
    pos = (~small) & (s > 0)
    if np.any(pos):
        z = np.sqrt(s[pos])
        out[pos] = special.iv(m, z) / z**m
    neg = (~small) & (s < 0)
    if np.any(neg):
        z = np.sqrt(-s[neg])
        out[neg] = special.jv(m, z) / z**m
    return float(out) if out.ndim == 0 else out
