"""Dynamic event trigger: holding error, threshold variable ``m`` and control updates.

Everything here is written for scalars and for batches (trailing axis of
length ``b``), so a sweep of initial conditions shares one loop.  The
module reads only the observer profile and the measurement ``u(0, t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import TriggerParams
from .kernels import ControlKernel, trapezoid_weights


class TriggerInvariantError(RuntimeError):
    """``m < 0`` or ``d**2 <= -m`` failed; the trigger can no longer be trusted."""


@dataclass(frozen=True)
class Event:
    index: int
    t: float
    U: float
    gap: float
    m: float


@dataclass
class TriggerState:
    U_held: float
    t_last_event: float
    snapshot_uhat: np.ndarray
    m: float
    d: float = 0.0
    event_log: list[Event] = field(default_factory=list)


def control_weights(control: ControlKernel) -> np.ndarray:
    """Quadrature weights turning ``u_hat`` samples into ``int k u_hat``."""
    return trapezoid_weights(control.k.shape[0]) * control.k


def continuous_control(uhat, control: ControlKernel, weights: np.ndarray | None = None):
    """``U = int_0^1 k(y) u_hat(y) dy`` by the trapezoid rule."""
    uhat = np.asarray(uhat, dtype=float)
    if uhat.shape[0] != control.k.shape[0]:
        raise ValueError("profile and control kernel are sampled on different grids")
    w = control_weights(control) if weights is None else weights
    U = w @ uhat
    # Cauchy-Schwarz in the discrete trapezoid inner product
    tw = trapezoid_weights(uhat.shape[0])
    k_norm = np.sqrt(tw @ control.k**2)
    u_norm = np.sqrt(np.einsum("i,i...->...", tw, uhat * uhat))
    if np.any(np.abs(U) > k_norm * u_norm * (1 + 1e-12) + 1e-300):
        raise AssertionError("control value exceeds the Cauchy-Schwarz bound")
    return float(U) if np.ndim(U) == 0 else U


def holding_error(state: TriggerState, uhat_now, control: ControlKernel, debug: bool = False) -> float:
    """``d = U_held - U(t)``; with ``debug`` also the snapshot form ``int k (u_hat(t_j) - u_hat(t))``."""
    d = state.U_held - continuous_control(uhat_now, control)
    if debug:
        alt = continuous_control(state.snapshot_uhat - np.asarray(uhat_now, dtype=float), control)
        if abs(alt - d) > 1e-12 * max(1.0, abs(state.U_held)):
            raise AssertionError(f"holding error forms disagree: {d!r} vs {alt!r}")
    return d


def step_m(m, d, w_hat_norm_sq, w_hat_1_sq, w_tilde_0_sq, dt: float, tp: TriggerParams):
    """One step of ``m' = -eta m + rho d**2 - beta1 |w_hat|**2 - beta2 w_hat(1)**2 - beta3 w_tilde(0)**2``.

    The decay term is implicit and the sources explicit.
    """
    source = tp.rho * d**2 - tp.beta1 * w_hat_norm_sq - tp.beta2 * w_hat_1_sq - tp.beta3 * w_tilde_0_sq
    return (m + dt * source) / (1.0 + dt * tp.eta)


def should_fire(d, m):
    """Event condition ``d**2 > -m`` (strict); raises if ``m`` is not negative."""
    m = np.asarray(m, dtype=float)
    if np.any(~(m < 0)):
        raise TriggerInvariantError(f"dynamic variable m must stay negative, got max {np.max(m)!r}")
    fire = np.asarray(d, dtype=float) ** 2 > -m
    return bool(fire) if fire.ndim == 0 else fire


def on_event(state: TriggerState, t: float, uhat_now, control: ControlKernel) -> TriggerState:
    """Refresh the held input from the current estimate; ``m`` is left untouched."""
    uhat_now = np.array(uhat_now, dtype=float, copy=True)
    U = continuous_control(uhat_now, control)
    gap = t - state.t_last_event if state.event_log else 0.0
    state.event_log.append(Event(index=len(state.event_log), t=t, U=U, gap=gap, m=state.m))
    state.U_held = U
    state.snapshot_uhat = uhat_now
    state.t_last_event = t
    state.d = 0.0
    return state


def lyapunov_V(w_tilde_norm_sq, w_hat_norm_sq, m, A: float, B: float):
    """``V = A/2 |w_tilde|**2 + B/2 |w_hat|**2 - m``."""
    if np.any(np.asarray(m) >= 0):
        raise TriggerInvariantError("m must be negative")
    return 0.5 * A * w_tilde_norm_sq + 0.5 * B * w_hat_norm_sq - m


@dataclass(frozen=True)
class Lemma2Report:
    n_checked: int
    n_excluded: int
    n_violations: int
    worst_ratio: float

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def lemma2_check(t, d, w_hat_norm_sq, w_hat_1_sq, w_tilde_0_sq, events, constants, slack: float = 0.1,
                 floor: float = 1e-8) -> Lemma2Report:
    """Check ``d'**2 <= rho1 d**2 + alpha1 |w_hat|**2 + alpha2 w_hat(1)**2 + alpha3 w_tilde(0)**2``.

    ``d'`` is a central difference over samples ``i-1`` and ``i+1``;
    samples where an event falls at ``i`` or ``i+1`` are skipped because ``d``
    jumps there.  ``constants`` is ``(rho1, alpha1, alpha2, alpha3)`` and
    ``events`` a boolean array marking samples at which the input was
    refreshed.  ``worst_ratio`` is the largest ``d'**2 / allowed``.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    events = np.asarray(events, dtype=bool)
    if t.shape[0] < 3:
        return Lemma2Report(0, 0, 0, 0.0)
    rho1, a1, a2, a3 = constants
    ddot = (d[2:] - d[:-2]) / (t[2:] - t[:-2])
    rhs = (rho1 * d[1:-1] ** 2 + a1 * np.asarray(w_hat_norm_sq)[1:-1]
           + a2 * np.asarray(w_hat_1_sq)[1:-1] + a3 * np.asarray(w_tilde_0_sq)[1:-1])
    keep = ~(events[1:-1] | events[2:])
    allowed = (1 + slack) * rhs + floor
    lhs = ddot**2
    ratio = np.where(keep, lhs / allowed, 0.0)
    return Lemma2Report(
        n_checked=int(keep.sum()),
        n_excluded=int((~keep).sum()),
        n_violations=int(np.sum(keep & (lhs > allowed))),
        worst_ratio=float(ratio.max()) if ratio.size else 0.0,
    )


@dataclass(frozen=True)
class DecayReport:
    n_samples: int
    n_violations: int
    worst_ratio: float

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def lyapunov_decay_check(t, V, varrho: float, tol: float = 0.05) -> DecayReport:
    """Check ``V(t) <= (1 + tol) exp(-varrho (t - s)) V(s)`` for every sampled ``s < t``.

    With ``W = V exp(varrho t)`` this is ``W(t) <= (1 + tol) min_{s<t} W(s)``,
    a single pass with a running minimum.  ``worst_ratio`` is the largest
    ``W(t) / min_{s<t} W(s)``.
    """
    t = np.asarray(t, dtype=float)
    V = np.asarray(V, dtype=float)
    if t.shape[0] < 2:
        return DecayReport(t.shape[0], 0, 0.0)
    # log form avoids overflow of exp(varrho t) on long horizons
    logW = np.log(V) + varrho * t
    prev_min = np.minimum.accumulate(logW)[:-1]
    excess = logW[1:] - prev_min
    return DecayReport(
        n_samples=int(t.shape[0]),
        n_violations=int(np.sum(excess > math.log1p(tol))),
        worst_ratio=float(np.exp(excess.max())),
    )
