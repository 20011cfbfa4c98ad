"""Certificate constants: holding-error bound, dwell-time, Lyapunov feasibility."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .kernels import (
    BacksteppingDesign,
    ControlKernel,
    KernelTable,
    ObserverGains,
    SystemParams,
    design,
    transform_norm_bounds,
    trapezoid,
)

# strict inequalities are checked with this margin
MARGIN = 1e-9
# the free Lyapunov weight is taken this factor above its smallest admissible value
SAFETY = 1.01


def open_loop_mu(q: float) -> float:
    """Root of ``mu tan(mu) = q`` in ``(0, pi/2)`` by bisection.

    ``lam - eps mu**2`` is the growth rate of the uncontrolled plant.
    """
    if not (q > 0 and math.isfinite(q)):
        raise ValueError("q must be positive and finite")
    lo, hi = 0.0, math.pi / 2 - 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if mid * math.tan(mid) < q:
            lo = mid
        else:
            hi = mid
    return min((lo, hi), key=lambda m: abs(m * math.tan(m) - q))


def derived_constants(params: SystemParams, control: ControlKernel, gains: ObserverGains,
                      table_L: KernelTable) -> tuple[float, float, float, float]:
    """Return ``(rho1, alpha1, alpha2, alpha3)`` of the holding-error derivative bound.

    ``d'(t)**2 <= rho1 d**2 + alpha1 ||w_hat||**2 + alpha2 w_hat(1)**2 + alpha3 w_tilde(0)**2``
    """
    eps, lam, q = params.eps, params.lam, params.q
    if control.d2k is None or control.dk is None:
        raise ValueError("control kernel needs first and second derivative samples")
    k, k0, k1, dk1 = control.k, control.k0, control.k1, control.dk1
    rho1 = 6 * eps**2 * k1**2
    boundary = eps * q * k1 + eps * dk1
    L_tilde = (1.0 + math.sqrt(table_L.l2_norm_sq)) ** 2
    L_last_sq = trapezoid(table_L.values[-1] ** 2)
    interior = eps * control.d2k + eps * k1 * k + lam * k
    alpha1 = 3 * L_tilde * trapezoid(interior**2) + 6 * boundary**2 * L_last_sq
    alpha2 = 6 * boundary**2
    alpha3 = 6 * (0.5 * lam * k0 + trapezoid(k * gains.p1)) ** 2
    return rho1, alpha1, alpha2, alpha3


@dataclass(frozen=True)
class TriggerParams:
    """Parameters of the dynamic event trigger."""

    eta: float
    sigma: float
    m0: float
    rho: float
    beta1: float
    beta2: float
    beta3: float

    @property
    def betas(self) -> tuple[float, float, float]:
        return self.beta1, self.beta2, self.beta3


def trigger_params(alphas: Sequence[float], sigma: float, eta: float, m0: float, rho: float) -> TriggerParams:
    if not 0 < sigma < 1:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    if not m0 < 0:
        raise ValueError(f"m0 must be negative, got {m0}")
    if not (eta > 0 and rho > 0):
        raise ValueError("eta and rho must be positive")
    b1, b2, b3 = (a / (1 - sigma) for a in alphas)
    return TriggerParams(eta=eta, sigma=sigma, m0=m0, rho=rho, beta1=b1, beta2=b2, beta3=b3)


def quadratic_reciprocal_integral(a1: float, a2: float, a3: float) -> float:
    """Closed form of ``int_0^1 ds / (a1 s**2 + a2 s + a3)`` for positive coefficients.

    The three discriminant cases are written so that they agree continuously
    as the discriminant passes through zero.
    """
    disc = a2 * a2 - 4 * a1 * a3
    if disc > 0:
        root = math.sqrt(disc)
        return math.log1p(root * (a2 + root) / ((2 * a1 + a2 + root) * a3)) / root
    if disc < 0:
        root = math.sqrt(-disc)
        return 2.0 / root * math.atan2(2 * a1 * root, -disc + a2 * (2 * a1 + a2))
    return 4 * a1 / (a2 * (2 * a1 + a2))


def dwell_time(rho1: float, rho: float, sigma: float, eta: float) -> tuple[float, float, float, float]:
    """Return ``(a1, a2, a3, tau)``; ``tau`` is the guaranteed minimal inter-event time in seconds."""
    if not (rho1 > 0 and rho > 0 and eta > 0):
        raise ValueError("rho1, rho and eta must be positive")
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    a1 = sigma * rho
    a2 = 1 + rho1 + 2 * (1 - sigma) * rho + eta
    a3 = (1 + rho1 + (1 - sigma) * rho + eta) * (1 - sigma) / sigma
    return a1, a2, a3, quadratic_reciprocal_integral(a1, a2, a3)


@dataclass(frozen=True)
class LyapunovCandidate:
    B: float
    kappa1: float
    kappa2: float
    kappa3: float

    @property
    def rho(self) -> float:
        raise AttributeError("rho depends on eps; use LyapunovCertificate.rho")


PAPER_CANDIDATE = LyapunovCandidate(B=460.0, kappa1=2.1, kappa2=312.5, kappa3=59.4)


@dataclass(frozen=True)
class LyapunovCertificate:
    ok: bool
    A: float
    B: float
    kappa1: float
    kappa2: float
    kappa3: float
    rho: float
    varrho: float
    b1: float
    b2: float
    sapie1: float
    sapie2: float
    violated: str | None = None


def _sapie1(params: SystemParams, betas, g_norm_sq, cand: LyapunovCandidate) -> float:
    eps, lam = params.eps, params.lam
    bracket = (eps * min(params.r - 0.5, 0.5) - eps / (2 * cand.kappa1)
               - 5 * lam / (8 * cand.kappa2) - g_norm_sq / cand.kappa3)
    return cand.B * bracket - 2 * betas[0] - betas[1]


def _sapie2(params: SystemParams, betas, cand: LyapunovCandidate, A: float) -> float:
    eps, lam, q = params.eps, params.lam, params.q
    return (A * eps * min(q - 0.5, 0.5) - 5 * lam * cand.kappa2 * cand.B / 8
            - 5 * cand.kappa3 * cand.B / 4 - 5 * betas[2] / 2)


def lyapunov_feasibility(params: SystemParams, betas: Sequence[float], g_norm_sq: float,
                         candidate: LyapunovCandidate, eta: float, A: float | None = None) -> LyapunovCertificate:
    """Check the event-triggered Lyapunov conditions for a candidate ``(B, kappa1..3)``.

    ``A`` defaults to the smallest admissible value times :data:`SAFETY`.
    The result reports ``ok=False`` and names the failed inequality instead
    of raising.
    """
    if min(candidate.B, candidate.kappa1, candidate.kappa2, candidate.kappa3) <= 0:
        raise ValueError("candidate values must be positive")
    eps, lam = params.eps, params.lam
    c = candidate
    s1 = _sapie1(params, betas, g_norm_sq, c)
    if A is None:
        need = 5 * lam * c.kappa2 * c.B / 8 + 5 * c.kappa3 * c.B / 4 + 5 * betas[2] / 2
        A = SAFETY * need / (eps * min(params.q - 0.5, 0.5))
    s2 = _sapie2(params, betas, c, A)
    rho = eps * c.kappa1 * c.B / 2
    b1 = A * eps / 4 - 5 * lam * c.kappa2 * c.B / 16 - 5 * c.kappa3 * c.B / 8 - 5 * betas[2] / 4
    b2 = eps * c.B / 4 - 5 * lam * c.B / (16 * c.kappa2) - g_norm_sq * c.B / (2 * c.kappa3) - betas[0]
    varrho = min(b1, b2, eta) / max(A / 2, c.B / 2, 1.0)
    violated = None
    if not params.assumption_holds:
        violated = "assumption: q > (lam+eps)/(2 eps)"
    elif s1 <= MARGIN:
        violated = f"B-inequality: left side {s1:.6g} <= 0"
    elif s2 <= MARGIN:
        violated = f"A-inequality: left side {s2:.6g} <= 0"
    elif b1 <= 0 or b2 <= 0:
        violated = f"decay coefficients b1={b1:.6g}, b2={b2:.6g} not positive"
    return LyapunovCertificate(ok=violated is None, A=A, B=c.B, kappa1=c.kappa1, kappa2=c.kappa2,
                               kappa3=c.kappa3, rho=rho, varrho=varrho, b1=b1, b2=b2,
                               sapie1=s1, sapie2=s2, violated=violated)


def minimal_feasible_candidate(params: SystemParams, betas: Sequence[float], g_norm_sq: float,
                               candidate: LyapunovCandidate) -> LyapunovCandidate | None:
    """Keep ``kappa1..3`` and raise ``B`` to :data:`SAFETY` times its smallest admissible value.

    Returns ``None`` when no ``B`` works for these kappas (the bracket
    multiplying ``B`` is not positive).
    """
    unit = LyapunovCandidate(B=1.0, kappa1=candidate.kappa1, kappa2=candidate.kappa2, kappa3=candidate.kappa3)
    bracket = _sapie1(params, (0.0, 0.0, 0.0), g_norm_sq, unit)
    if bracket <= 0:
        return None
    B = SAFETY * (2 * betas[0] + betas[1]) / bracket
    return LyapunovCandidate(B=B, kappa1=candidate.kappa1, kappa2=candidate.kappa2, kappa3=candidate.kappa3)


@dataclass(frozen=True)
class ContinuousCertificate:
    ok: bool
    delta1: float
    delta2: float
    H: float
    vartheta1: float
    vartheta2: float
    decay_rate: float


def _pps1(params: SystemParams, g_norm_sq: float, d1, d2):
    return params.eps * min(params.r - 0.5, 0.5) - 5 * params.lam / (8 * d1) - g_norm_sq / d2


def _pps2(params: SystemParams, d1, d2, H):
    return H * params.eps * min(params.q - 0.5, 0.5) - 5 * params.lam * d1 / 8 - 5 * d2 / 4


def ct_check(params: SystemParams, g_norm_sq: float, delta1: float, delta2: float, H: float) -> bool:
    """Both continuous-time conditions hold (the first strictly, so the decay rates are positive)."""
    return _pps1(params, g_norm_sq, delta1, delta2) > MARGIN and _pps2(params, delta1, delta2, H) > MARGIN


def ct_feasibility(params: SystemParams, g_norm_sq: float) -> ContinuousCertificate:
    """Search ``(delta1, delta2)`` on a log grid for the continuous-time Lyapunov certificate.

    The grid is ``10**k`` for ``k`` in ``[-2, 4]`` with ten points per decade;
    among feasible points the one with the largest decay rate is returned,
    with ``H`` at :data:`SAFETY` times its smallest admissible value.
    """
    eps, lam = params.eps, params.lam
    if not params.assumption_holds:
        return ContinuousCertificate(False, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan)
    axis = 10.0 ** np.linspace(-2, 4, 61)
    d1, d2 = np.meshgrid(axis, axis, indexing="ij")
    lhs1 = _pps1(params, g_norm_sq, d1, d2)
    H = SAFETY * (5 * lam * d1 / 8 + 5 * d2 / 4) / (eps * min(params.q - 0.5, 0.5))
    v1 = H * eps / 4 - 5 * lam * d1 / 16 - 5 * d2 / 8
    v2 = eps / 4 - 5 * lam / (16 * d1) - g_norm_sq / (2 * d2)
    rate = np.minimum(v1, v2) / np.maximum(H / 2, 0.5)
    feasible = (lhs1 > MARGIN) & (v1 > 0) & (v2 > 0)
    if not feasible.any():
        return ContinuousCertificate(False, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan)
    rate = np.where(feasible, rate, -np.inf)
    i, j = np.unravel_index(int(np.argmax(rate)), rate.shape)
    return ContinuousCertificate(True, float(d1[i, j]), float(d2[i, j]), float(H[i, j]),
                                 float(v1[i, j]), float(v2[i, j]), float(rate[i, j]))


@dataclass(frozen=True)
class CertificateSet:
    """Every analysis constant for one plant, trigger and Lyapunov candidate."""

    params: SystemParams
    grid_n: int
    r: float
    mu: float
    g_norm_sq: float
    rho1: float
    alpha1: float
    alpha2: float
    alpha3: float
    trigger: TriggerParams
    a1: float
    a2: float
    a3: float
    tau: float
    lyap: LyapunovCertificate
    ct: ContinuousCertificate
    P_tilde: float
    L_tilde: float
    k0: float
    k1: float
    dk0: float
    dk1: float
    feasible_candidate: LyapunovCandidate | None = field(default=None)

    @property
    def alphas(self) -> tuple[float, float, float]:
        return self.alpha1, self.alpha2, self.alpha3

    def to_dict(self) -> dict:
        out = asdict(self)
        out["open_loop_rate"] = self.params.lam - self.params.eps * self.mu**2
        return out


def certify(params: SystemParams, sigma: float = 0.1, eta: float = 1.0, m0: float = -1e-4,
            candidate: LyapunovCandidate = PAPER_CANDIDATE, grid_n: int = 162,
            kernels: BacksteppingDesign | None = None) -> CertificateSet:
    """Compute the full certificate set; kernel tables are built unless supplied."""
    params.require_assumption()
    if kernels is None:
        kernels = design(params, grid_n)
    grid_n = kernels.grid_n
    rho1, a1_, a2_, a3_ = derived_constants(params, kernels.control, kernels.gains, kernels.L)
    rho = params.eps * candidate.kappa1 * candidate.B / 2
    tp = trigger_params((a1_, a2_, a3_), sigma, eta, m0, rho)
    a1, a2, a3, tau = dwell_time(rho1, rho, sigma, eta)
    lyap = lyapunov_feasibility(params, tp.betas, kernels.g_norm_sq, candidate, eta)
    feasible = candidate if lyap.ok else minimal_feasible_candidate(params, tp.betas, kernels.g_norm_sq, candidate)
    P_tilde, L_tilde = transform_norm_bounds(kernels.P, kernels.L)
    c = kernels.control
    return CertificateSet(
        params=params, grid_n=grid_n, r=params.r, mu=open_loop_mu(params.q),
        g_norm_sq=kernels.g_norm_sq, rho1=rho1, alpha1=a1_, alpha2=a2_, alpha3=a3_,
        trigger=tp, a1=a1, a2=a2, a3=a3, tau=tau, lyap=lyap,
        ct=ct_feasibility(params, kernels.g_norm_sq), P_tilde=P_tilde, L_tilde=L_tilde,
        k0=c.k0, k1=c.k1, dk0=c.dk0, dk1=c.dk1, feasible_candidate=feasible,
    )


# reported reference values and their relative tolerances (3 s.f. -> 3 %, 2 s.f. -> 5 %)
PAPER_REFERENCE = {
    "alpha1": (4.14, 0.03),
    "alpha2": (2.07, 0.03),
    "alpha3": (3.3, 0.03),
    "g_norm_sq": (0.0297, 0.03),
    "beta1": (4.6, 0.03),
    "beta2": (2.3, 0.03),
    "beta3": (3.7, 0.03),
    "rho": (48.3, 1e-9),
    "tau_eta1": (2.2e-3, 0.05),
    "tau_eta100": (7.2e-4, 0.05),
}


def compare_with_reference(params: SystemParams, sigma: float = 0.1,
                           candidate: LyapunovCandidate = PAPER_CANDIDATE, grid_n: int = 162,
                           kernels: BacksteppingDesign | None = None) -> list[dict]:
    """Compare computed constants with the published ones; one record per quantity."""
    if kernels is None:
        kernels = design(params, grid_n)
    slow = certify(params, sigma=sigma, eta=1.0, candidate=candidate, kernels=kernels)
    _, _, _, tau_fast = dwell_time(slow.rho1, slow.trigger.rho, sigma, 100.0)
    got = {
        "alpha1": slow.alpha1, "alpha2": slow.alpha2, "alpha3": slow.alpha3,
        "g_norm_sq": slow.g_norm_sq, "beta1": slow.trigger.beta1, "beta2": slow.trigger.beta2,
        "beta3": slow.trigger.beta3, "rho": slow.trigger.rho,
        "tau_eta1": slow.tau, "tau_eta100": tau_fast,
    }
    rows = []
    for name, (ref, tol) in PAPER_REFERENCE.items():
        rel = abs(got[name] - ref) / abs(ref)
        rows.append({"name": name, "computed": got[name], "reference": ref,
                     "rel_error": rel, "tolerance": tol, "ok": rel <= tol})
    return rows
