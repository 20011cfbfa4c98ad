"""Implicit Euler finite differences for the plant and the boundary observer.

Profiles are plain float arrays of shape ``(n,)`` or ``(n, b)``; the second
form advances ``b`` independent copies that share the same matrix, which is
how parameter sweeps are batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .kernels import ObserverGains, SystemParams, trapezoid_weights


@dataclass(frozen=True)
class Grid:
    n_nodes: int
    dt: float

    @property
    def h(self) -> float:
        return 1.0 / (self.n_nodes - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_nodes)


def build_grid(n_nodes: int = 162, dt: float | None = None) -> Grid:
    """Uniform grid on ``[0, 1]``; ``dt`` defaults to the spatial step."""
    if int(n_nodes) != n_nodes or n_nodes < 3:
        raise ValueError(f"n_nodes must be an integer >= 3, got {n_nodes}")
    n_nodes = int(n_nodes)
    if dt is None:
        dt = 1.0 / (n_nodes - 1)
    if not (dt > 0 and np.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    return Grid(n_nodes=n_nodes, dt=float(dt))


def _bump(x: np.ndarray) -> np.ndarray:
    return x**2 * (x - 1) ** 2


def init_profile(kind: str, grid: Grid, *, n: int = 1, scale: float = 1.0, samples=None) -> np.ndarray:
    """Sample an initial condition on the grid.

    ``kind`` is one of ``paper_u0`` (``10 x^2 (x-1)^2``), ``paper_uhat0``
    (``5 x^2 (x-1)^2 + 5 x^3 (x-1)^3``), ``sweep`` (``x^2 (x-1)^2 sin(n pi x)``)
    or ``samples`` (values given explicitly).  The result is multiplied by
    ``scale``.
    """
    x = grid.x
    if kind == "paper_u0":
        f = 10 * _bump(x)
    elif kind == "paper_uhat0":
        f = 5 * _bump(x) + 5 * x**3 * (x - 1) ** 3
    elif kind == "sweep":
        if int(n) != n or n < 1:
            raise ValueError(f"sweep index must be a positive integer, got {n}")
        f = _bump(x) * np.sin(n * np.pi * x)
    elif kind == "samples":
        if samples is None:
            raise ValueError("kind 'samples' needs the samples argument")
        f = np.asarray(samples, dtype=float)
        if f.shape != (grid.n_nodes,):
            raise ValueError(f"expected {grid.n_nodes} samples, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("samples must be finite")
    else:
        raise ValueError(f"unknown initial condition kind {kind!r}")
    return scale * f


def l2_norm(profile, grid: Grid | None = None) -> np.ndarray | float:
    """Trapezoid approximation of the L2 norm; batched profiles give one norm per column."""
    f = np.asarray(profile, dtype=float)
    if grid is not None and f.shape[0] != grid.n_nodes:
        raise ValueError("profile length does not match the grid")
    w = trapezoid_weights(f.shape[0])
    out = np.sqrt(np.einsum("i,i...->...", w, f * f))
    return float(out) if out.ndim == 0 else out


class _Tridiagonal:
    """LU-factored tridiagonal matrix for repeated solves."""

    def __init__(self, lower: np.ndarray, diag: np.ndarray, upper: np.ndarray):
        dl, d, du, du2, ipiv, info = lapack.dgttrf(lower, diag, upper)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal factorization failed (info={info})")
        self._lu = (dl, d, du, du2, ipiv)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dgttrs(*self._lu, rhs)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x


def _heat_bands(grid: Grid, params: SystemParams):
    n, a = grid.n_nodes, grid.dt * params.eps / grid.h**2
    diag = np.full(n, 1 + 2 * a - grid.dt * params.lam)
    diag[-1] += 2 * a * grid.h * params.q
    lower = np.full(n - 1, -a)
    upper = np.full(n - 1, -a)
    upper[0] = -2 * a
    lower[-1] = -2 * a
    return lower, diag, upper


class PlantStepper:
    """One implicit Euler step of ``u_t = eps u_xx + lam u`` with ``u_x(0) = 0`` and ``u_x(1) + q u(1) = U``.

    Both boundary conditions enter through ghost nodes, keeping second order in space.
    """

    def __init__(self, grid: Grid, params: SystemParams):
        self.grid = grid
        self.params = params
        self._lu = _Tridiagonal(*_heat_bands(grid, params))
        self._input_gain = 2 * grid.dt * params.eps / grid.h

    def step(self, u: np.ndarray, U) -> np.ndarray:
        rhs = np.array(u, dtype=float, copy=True)
        rhs[-1] += self._input_gain * np.asarray(U, dtype=float)
        return self._lu.solve(rhs)


class ObserverStepper:
    """Implicit Euler step of the boundary observer.

    The output injection ``p1(x)(y - u_hat(0))`` and the boundary injection
    ``p10 (y - u_hat(0))`` are both taken at the new time level, with ``y``
    the plant measurement at that level.  The coupling of every row to node
    0 is a rank-one correction of the tridiagonal heat matrix and is removed
    with the Sherman-Morrison formula.
    """

    def __init__(self, grid: Grid, params: SystemParams, gains: ObserverGains):
        if gains.p1.shape != (grid.n_nodes,):
            raise ValueError("observer gains were computed on a different grid")
        self.grid = grid
        self.params = params
        dt, h = grid.dt, grid.h
        a = dt * params.eps / h**2
        lower, diag, upper = _heat_bands(grid, params)
        self._row0 = -2 * a * h * gains.p10 + dt * gains.p1[0]
        diag[0] += self._row0
        self._lu = _Tridiagonal(lower, diag, upper)
        col = dt * gains.p1.copy()
        col[0] = 0.0
        self._inject = dt * gains.p1.copy()
        self._inject[0] = self._row0
        self._v = self._lu.solve(col)
        self._input_gain = 2 * dt * params.eps / h

    def step(self, uhat: np.ndarray, U, y) -> np.ndarray:
        rhs = np.array(uhat, dtype=float, copy=True)
        y = np.asarray(y, dtype=float)
        rhs += np.multiply.outer(self._inject, y) if rhs.ndim == 2 else self._inject * y
        rhs[-1] += self._input_gain * np.asarray(U, dtype=float)
        z = self._lu.solve(rhs)
        v = self._v if z.ndim == 1 else self._v[:, None]
        return z - v * (z[0] / (1.0 + self._v[0]))


def step_plant(u: np.ndarray, U, grid: Grid, params: SystemParams) -> np.ndarray:
    """Single plant step; builds the factorization each call, use :class:`PlantStepper` in loops."""
    return PlantStepper(grid, params).step(u, U)


def step_observer(uhat: np.ndarray, U, y_meas, grid: Grid, params: SystemParams, gains: ObserverGains) -> np.ndarray:
    """Single observer step; see :class:`ObserverStepper`."""
    return ObserverStepper(grid, params, gains).step(uhat, U, y_meas)
