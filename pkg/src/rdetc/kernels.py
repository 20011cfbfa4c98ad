"""Backstepping gain kernels, observer gains and the fields derived from them.

Four kernels live on the triangle ``0 <= y <= x <= 1``:

* ``P`` maps the observer-error target system back to the error system,
  ``Q`` is its inverse.  Both carry a tau-integral that is evaluated with
  Gauss-Legendre quadrature.
* ``K`` is the controller kernel, ``L`` its inverse.  Both are closed form.

Everything here is a pure function of :class:`SystemParams` and the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Literal

import numpy as np

from .bessel import bessel_ratio

KernelKind = Literal["P", "Q", "K", "L"]

_MAX_QUAD_POINTS = 4096
_CHUNK = 200_000


class AssumptionError(ValueError):
    """Raised when the plant parameters violate ``q > (lam + eps) / (2 eps)``."""


@dataclass(frozen=True)
class SystemParams:
    """Plant constants: diffusion ``eps``, reaction ``lam`` and Robin coefficient ``q``."""

    eps: float
    lam: float
    q: float

    def __post_init__(self):
        for name in ("eps", "lam", "q"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def ratio(self) -> float:
        """``lam / eps``, the only combination the kernels depend on besides ``q``."""
        return self.lam / self.eps

    @property
    def r(self) -> float:
        """Robin coefficient of the controller target system."""
        return self.q - self.lam / (2 * self.eps)

    @property
    def assumption_holds(self) -> bool:
        return self.q > (self.lam + self.eps) / (2 * self.eps)

    def require_assumption(self) -> None:
        if not self.assumption_holds:
            raise AssumptionError(
                f"q={self.q} must exceed (lam+eps)/(2 eps)={(self.lam + self.eps) / (2 * self.eps)}"
            )


PAPER_PARAMS = SystemParams(eps=0.1, lam=0.25, q=2.3)


def uniform_nodes(grid_n: int) -> np.ndarray:
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    return np.linspace(0.0, 1.0, grid_n)


def trapezoid_weights(grid_n: int) -> np.ndarray:
    """Composite trapezoid weights on the uniform grid of ``[0, 1]``."""
    h = 1.0 / (grid_n - 1)
    w = np.full(grid_n, h)
    w[0] = w[-1] = h / 2
    return w


def trapezoid(values: np.ndarray) -> float:
    """Trapezoid integral over ``[0, 1]`` of samples on the uniform grid."""
    values = np.asarray(values, dtype=float)
    return float(trapezoid_weights(values.shape[0]) @ values)


# Gregory end-correction coefficients for the first and second differences
_GREGORY = (1.0 / 12.0, 1.0 / 24.0)


def _gregory_row(m: int, h: float) -> np.ndarray:
    w = np.full(m + 1, h)
    w[0] = w[-1] = h / 2
    order = min(len(_GREGORY), m // 2)
    for k in range(1, order + 1):
        ck = _GREGORY[k - 1]
        for j in range(k + 1):
            binom = math.comb(k, j)
            # forward difference at the left end, backward difference at the right end
            w[j] -= h * ck * (-1) ** j * binom
            w[m - j] -= h * ck * (-1) ** j * binom
    return w


def volterra_weights(grid_n: int) -> np.ndarray:
    """Lower-triangular quadrature matrix for ``int_0^{x_i} f(y) dy``.

    Row ``i`` integrates over nodes ``0..i`` with the trapezoid rule plus
    Gregory corrections from first and second end differences (fourth order
    once a row has five nodes).  Row 0 is empty.
    """
    h = 1.0 / (grid_n - 1)
    W = np.zeros((grid_n, grid_n))
    for i in range(1, grid_n):
        W[i, : i + 1] = _gregory_row(i, h)
    return W


def triangle_trapezoid_weights(grid_n: int) -> np.ndarray:
    """Weights of the iterated trapezoid rule for ``int_0^1 int_0^x f dy dx``."""
    h = 1.0 / (grid_n - 1)
    W = np.tril(np.full((grid_n, grid_n), h))
    idx = np.arange(grid_n)
    W[:, 0] = h / 2
    W[idx, idx] = h / 2
    W[0, 0] = 0.0
    return W * trapezoid_weights(grid_n)[:, None]


# --------------------------------------------------------------------------
# pointwise kernels

def _check_triangle(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y > x) or np.any(y < 0) or np.any(x > 1):
        raise ValueError("kernels are defined only on 0 <= y <= x <= 1")
    return np.broadcast_arrays(x, y)


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _tau_integral(x, y, lam_eps, q, sign, n):
    """Gauss-Legendre value of the tau-integral shared by P (sign=+1) and Q (sign=-1)."""
    nodes, weights = _gauss_legendre(n)
    span = (x - y)[..., None]
    tau = 0.5 * span * (1.0 + nodes)
    growth = math.sqrt(q * q + sign * lam_eps)
    arg = sign * lam_eps * (2.0 - x - y)[..., None] * (span - tau)
    f = np.exp(-q * tau / 2) * bessel_ratio(0, arg) * np.sinh(growth * tau / 2)
    return 0.5 * (x - y) * (f @ weights)


def _pq_kernel(x, y, params: SystemParams, sign: int, quad_points: int, tol: float):
    """Evaluate P or Q on arbitrary points, including the continuation past ``y = x``.

    The node count is doubled globally until two successive results agree
    to ``tol``, so every point of one call shares the same rule.  That keeps
    finite differences built from a single call free of quadrature jitter.
    """
    c, q = params.ratio, params.q
    if sign < 0 and q * q <= c:
        raise AssumptionError("Q requires q**2 > lam/eps")
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    shape = x.shape
    xf, yf = x.ravel(), y.ravel()

    def integral(n):
        out = np.empty(xf.shape)
        for start in range(0, xf.size, _CHUNK):
            sl = slice(start, start + _CHUNK)
            out[sl] = _tau_integral(xf[sl], yf[sl], c, q, sign, n)
        return out

    n = quad_points
    coarse = integral(n)
    while True:
        fine = integral(2 * n)
        if np.max(np.abs(fine - coarse), initial=0.0) < tol or 2 * n >= _MAX_QUAD_POINTS:
            break
        n, coarse = 2 * n, fine
    growth = math.sqrt(q * q + sign * c)
    trace = -c * (1.0 - yf) * bessel_ratio(1, sign * c * ((1.0 - yf) ** 2 - (1.0 - xf) ** 2))
    out = (q * c / growth) * fine + trace
    return out.reshape(shape)


def _as_result(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def eval_kernel_P(x, y, params: SystemParams, quad_points: int = 64, tol: float = 1e-10):
    """Observer-error kernel ``P(x, y)``; vectorised over ``x`` and ``y``."""
    x, y = _check_triangle(x, y)
    return _as_result(_pq_kernel(x, y, params, +1, quad_points, tol))


def eval_kernel_Q(x, y, params: SystemParams, quad_points: int = 64, tol: float = 1e-10):
    """Inverse of the ``P`` transformation.  Needs ``q**2 > lam/eps``."""
    x, y = _check_triangle(x, y)
    return _as_result(_pq_kernel(x, y, params, -1, quad_points, tol))


def eval_kernel_K(x, y, params: SystemParams):
    """Controller kernel ``K(x, y) = -(lam/eps) x I1(z)/z`` with ``z**2 = (lam/eps)(x**2 - y**2)``."""
    x, y = _check_triangle(x, y)
    c = params.ratio
    return _as_result(-c * x * bessel_ratio(1, c * (x * x - y * y)))


def eval_kernel_L(x, y, params: SystemParams):
    """Inverse of the ``K`` transformation (``J1`` in place of ``I1``)."""
    x, y = _check_triangle(x, y)
    c = params.ratio
    return _as_result(-c * x * bessel_ratio(1, -c * (x * x - y * y)))


def eval_kernel_Kx(x, y, params: SystemParams):
    """``dK/dx`` from ``d/dz [I1(z)/z] = I2(z)/z``."""
    x, y = _check_triangle(x, y)
    c = params.ratio
    s = c * (x * x - y * y)
    return _as_result(-c * (bessel_ratio(1, s) + c * x * x * bessel_ratio(2, s)))


# --------------------------------------------------------------------------
# tables

@dataclass(frozen=True)
class KernelTable:
    """A kernel sampled on the lower triangle of the uniform ``grid_n`` grid.

    ``values[i, j]`` holds ``kernel(x_i, y_j)`` for ``j <= i``; the upper
    triangle is zero and never read.
    """

    kind: KernelKind
    grid_n: int
    values: np.ndarray = field(repr=False)
    quad_points: int = 0

    @property
    def x(self) -> np.ndarray:
        return uniform_nodes(self.grid_n)

    @cached_property
    def operator(self) -> np.ndarray:
        """Matrix of ``f -> int_0^x kernel(x, y) f(y) dy`` (see :func:`volterra_weights`)."""
        return self.values * volterra_weights(self.grid_n)

    @cached_property
    def l2_norm_sq(self) -> float:
        """Trapezoid value of ``int_0^1 int_0^x kernel**2 dy dx``."""
        return float((self.values**2 * triangle_trapezoid_weights(self.grid_n)).sum())


def build_table(kind: KernelKind, params: SystemParams, grid_n: int, quad_points: int = 64) -> KernelTable:
    x = uniform_nodes(grid_n)
    i, j = np.tril_indices(grid_n)
    xs, ys = x[i], x[j]
    if kind == "P":
        vals = _pq_kernel(xs, ys, params, +1, quad_points, 1e-10)
    elif kind == "Q":
        vals = _pq_kernel(xs, ys, params, -1, quad_points, 1e-10)
    elif kind == "K":
        vals = eval_kernel_K(xs, ys, params)
    elif kind == "L":
        vals = eval_kernel_L(xs, ys, params)
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    values = np.zeros((grid_n, grid_n))
    values[i, j] = vals
    values.setflags(write=False)
    return KernelTable(kind=kind, grid_n=grid_n, values=values,
                       quad_points=quad_points if kind in ("P", "Q") else 0)


def apply_volterra(direction: Literal["subtract", "add"], table: KernelTable, profile: np.ndarray) -> np.ndarray:
    """Return ``f(x) -/+ int_0^x kernel(x, y) f(y) dy`` on the grid.

    ``profile`` may be a single profile of length ``grid_n`` or a
    ``(grid_n, batch)`` stack of profiles.
    """
    profile = np.asarray(profile, dtype=float)
    if profile.shape[0] != table.grid_n:
        raise ValueError(f"profile has {profile.shape[0]} nodes, table has {table.grid_n}")
    integral = table.operator @ profile
    if direction == "subtract":
        return profile - integral
    if direction == "add":
        return profile + integral
    raise ValueError(f"direction must be 'subtract' or 'add', got {direction!r}")


def transform_norm_bounds(table_P: KernelTable, table_L: KernelTable) -> tuple[float, float]:
    """Amplification constants ``(1 + ||P||)**2`` and ``(1 + ||L||)**2`` over the triangle."""
    p = (1.0 + math.sqrt(table_P.l2_norm_sq)) ** 2
    l = (1.0 + math.sqrt(table_L.l2_norm_sq)) ** 2
    return p, l


# --------------------------------------------------------------------------
# gains and derived fields

@dataclass(frozen=True)
class ObserverGains:
    x: np.ndarray = field(repr=False)
    p1: np.ndarray = field(repr=False)
    p10: float


def _py_at_zero(x: np.ndarray, params: SystemParams, step: float, quad_points: int) -> np.ndarray:
    # second-order one-sided stencil into y > 0; points with 2*step > x use the continuation of P
    ys = np.array([0.0, step, 2 * step])
    vals = _pq_kernel(x[:, None], ys[None, :], params, +1, quad_points, 1e-12)
    return (-3 * vals[:, 0] + 4 * vals[:, 1] - vals[:, 2]) / (2 * step)


def observer_gains(params: SystemParams, grid_n: int, step: float = 1e-5, quad_points: int = 64) -> ObserverGains:
    """Output-injection gains ``p1(x) = eps * P_y(x, 0)`` and ``p10 = P(0, 0)``.

    ``P_y`` is a one-sided second-order difference with base ``step``,
    Richardson-extrapolated against the half step.
    """
    params.require_assumption()
    x = uniform_nodes(grid_n)
    coarse = _py_at_zero(x, params, step, quad_points)
    fine = _py_at_zero(x, params, step / 2, quad_points)
    p1 = params.eps * (4 * fine - coarse) / 3
    return ObserverGains(x=x, p1=p1, p10=-params.lam / (2 * params.eps))


@dataclass(frozen=True)
class ControlKernel:
    """``k(y) = r K(1, y) + K_x(1, y)`` with its first two derivatives."""

    x: np.ndarray = field(repr=False)
    k: np.ndarray = field(repr=False)
    dk: np.ndarray = field(repr=False)
    d2k: np.ndarray = field(repr=False)
    r: float

    @property
    def k0(self) -> float:
        return float(self.k[0])

    @property
    def k1(self) -> float:
        return float(self.k[-1])

    @property
    def dk0(self) -> float:
        return float(self.dk[0])

    @property
    def dk1(self) -> float:
        return float(self.dk[-1])


def control_kernel_at(y, params: SystemParams):
    """Return ``(k, k', k'')`` at arbitrary ``y`` in ``[0, 1]``.

    With ``F_m = I_m(z)/z**m`` and ``z**2 = c (1 - y**2)``, ``c = lam/eps``::

        k   = -c [(r+1) F1 + c F2]
        k'  =  c**2 y [(r+1) F2 + c F3]
        k'' =  c**2 [(r+1) F2 + c F3] - c**3 y**2 [(r+1) F3 + c F4]
    """
    y = np.asarray(y, dtype=float)
    c, r = params.ratio, params.r
    s = c * (1.0 - y * y)
    f1, f2, f3, f4 = (bessel_ratio(m, s) for m in (1, 2, 3, 4))
    k = -c * ((r + 1) * f1 + c * f2)
    inner = (r + 1) * f2 + c * f3
    dk = c * c * y * inner
    d2k = c * c * inner - c**3 * y * y * ((r + 1) * f3 + c * f4)
    return k, dk, d2k


def control_kernel(params: SystemParams, grid_n: int) -> ControlKernel:
    params.require_assumption()
    x = uniform_nodes(grid_n)
    k, dk, d2k = control_kernel_at(x, params)
    return ControlKernel(x=x, k=k, dk=dk, d2k=d2k, r=params.r)


def eval_g(params: SystemParams, gains: ObserverGains, grid_n: int) -> tuple[np.ndarray, float]:
    """Coupling function ``g(x) = p1(x) - (lam/2) K(x, 0) - int_0^x K(x, y) p1(y) dy`` and ``||g||**2``."""
    if gains.p1.shape[0] != grid_n:
        raise ValueError(f"gains sampled on {gains.p1.shape[0]} nodes, expected {grid_n}")
    x = uniform_nodes(grid_n)
    table_K = build_table("K", params, grid_n)
    g = gains.p1 - 0.5 * params.lam * eval_kernel_K(x, np.zeros_like(x), params) - table_K.operator @ gains.p1
    return g, trapezoid(g * g)


@dataclass(frozen=True)
class BacksteppingDesign:
    """All kernel tables and derived fields for one parameter set on one grid."""

    params: SystemParams
    grid_n: int
    P: KernelTable
    Q: KernelTable
    K: KernelTable
    L: KernelTable
    gains: ObserverGains
    control: ControlKernel
    g: np.ndarray = field(repr=False)
    g_norm_sq: float = 0.0

    @property
    def x(self) -> np.ndarray:
        return uniform_nodes(self.grid_n)

    @property
    def r(self) -> float:
        return self.params.r


def design(params: SystemParams, grid_n: int, quad_points: int = 64) -> BacksteppingDesign:
    """Precompute every kernel-side quantity once per parameter set."""
    params.require_assumption()
    gains = observer_gains(params, grid_n, quad_points=quad_points)
    g, g_norm_sq = eval_g(params, gains, grid_n)
    return BacksteppingDesign(
        params=params,
        grid_n=grid_n,
        P=build_table("P", params, grid_n, quad_points),
        Q=build_table("Q", params, grid_n, quad_points),
        K=build_table("K", params, grid_n),
        L=build_table("L", params, grid_n),
        gains=gains,
        control=control_kernel(params, grid_n),
        g=g,
        g_norm_sq=g_norm_sq,
    )


# --------------------------------------------------------------------------
# verification against the kernel PDEs

@dataclass(frozen=True)
class ResidualReport:
    kind: str
    grid_n: int
    interior: float
    boundary: float
    diagonal: float

    def as_dict(self) -> dict:
        return {"kind": self.kind, "grid_n": self.grid_n, "interior": self.interior,
                "boundary": self.boundary, "diagonal": self.diagonal}


def kernel_pde_residual(kind: Literal["P", "K"], params: SystemParams, grid_n: int) -> ResidualReport:
    """Finite-difference residuals of the closed-form kernels on the grid.

    For ``K``: ``K_xx - K_yy - (lam/eps) K`` inside, ``K_y(x, 0)`` on the
    bottom edge and ``K(x, x) + (lam/2eps) x`` on the diagonal.  For ``P``:
    ``P_xx - P_yy + (lam/eps) P`` inside, ``P_x(1, y) + q P(1, y)`` on the
    right edge and ``P(x, x) - (lam/2eps)(x - 1)`` on the diagonal.
    """
    if grid_n < 41:
        raise ValueError("grid_n must be at least 41")
    x = uniform_nodes(grid_n)
    h = x[1] - x[0]
    c = params.ratio
    table = build_table(kind, params, grid_n).values
    n = grid_n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    inside = (j >= 1) & (j <= i - 1) & (i <= n - 2)
    ii, jj = i[inside], j[inside]
    lap = (table[ii + 1, jj] - 2 * table[ii, jj] + table[ii - 1, jj]) / h**2 \
        - (table[ii, jj + 1] - 2 * table[ii, jj] + table[ii, jj - 1]) / h**2
    diag = np.diag(table)
    if kind == "K":
        interior = lap - c * table[ii, jj]
        rows = np.arange(2, n)
        edge = (-3 * table[rows, 0] + 4 * table[rows, 1] - table[rows, 2]) / (2 * h)
        trace = diag + 0.5 * c * x
    elif kind == "P":
        interior = lap + c * table[ii, jj]
        cols = np.arange(0, n - 2)
        dpx = (3 * table[n - 1, cols] - 4 * table[n - 2, cols] + table[n - 3, cols]) / (2 * h)
        edge = dpx + params.q * table[n - 1, cols]
        trace = diag - 0.5 * c * (x - 1)
    else:
        raise ValueError("residuals are implemented for P and K")
    return ResidualReport(kind=kind, grid_n=grid_n,
                          interior=float(np.max(np.abs(interior))),
                          boundary=float(np.max(np.abs(edge))),
                          diagonal=float(np.max(np.abs(trace))))
