import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
import mpmath

from rdetc.analysis import (
    MARGIN,
    PAPER_CANDIDATE,
    LyapunovCandidate,
    certify,
    ct_check,
    ct_feasibility,
    derived_constants,
    dwell_time,
    lyapunov_feasibility,
    minimal_feasible_candidate,
    open_loop_mu,
    quadratic_reciprocal_integral,
    trigger_params,
)
from rdetc.kernels import PAPER_PARAMS, SystemParams, design

P = PAPER_PARAMS


@pytest.fixture(scope="module")
def cert(paper_design):
    return certify(P, kernels=paper_design)


class TestMu:
    def test_paper_value(self):
        mu = open_loop_mu(2.3)
        assert mu == pytest.approx(1.118, abs=5e-4)
        assert P.eps * mu**2 == pytest.approx(0.125, abs=1e-3)
        assert P.lam - P.eps * mu**2 > 0

    def test_small_q(self):
        assert open_loop_mu(1e-6) < 1e-2

    def test_residuals(self):
        rng = np.random.default_rng(7)
        for q in rng.uniform(0.1, 50, 100):
            mu = open_loop_mu(q)
            assert 0 < mu < math.pi / 2
            assert abs(mu * math.tan(mu) - q) <= 1e-12 * max(1.0, q)

    @pytest.mark.parametrize("q", [0.0, -1.0, math.inf])
    def test_invalid(self, q):
        with pytest.raises(ValueError):
            open_loop_mu(q)


class TestDerivedConstants:
    def test_positive(self, paper_design):
        consts = derived_constants(P, paper_design.control, paper_design.gains, paper_design.L)
        assert all(c > 0 for c in consts)
        assert consts[0] == pytest.approx(6 * P.eps**2 * paper_design.control.k1**2)

    def test_grid_refinement(self, paper_design):
        coarse = derived_constants(P, paper_design.control, paper_design.gains, paper_design.L)
        fine_design = design(P, 323)
        fine = derived_constants(P, fine_design.control, fine_design.gains, fine_design.L)
        for a, b in zip(coarse, fine):
            assert abs(a - b) <= 0.005 * abs(b)

    def test_missing_derivatives(self, paper_design):
        import dataclasses
        broken = dataclasses.replace(paper_design.control, d2k=None)
        with pytest.raises(ValueError):
            derived_constants(P, broken, paper_design.gains, paper_design.L)

    def test_alpha1_reproduces(self, cert):
        assert cert.alpha1 == pytest.approx(4.14, rel=0.03)


class TestTriggerParams:
    def test_betas(self):
        tp = trigger_params((4.14, 2.07, 3.3), 0.1, 1.0, -1e-4, 48.3)
        assert tp.betas == pytest.approx((4.6, 2.3, 3.667), rel=0.01)
        for a, b in zip((4.14, 2.07, 3.3), tp.betas):
            assert b > a
            assert b / a == pytest.approx(1 / 0.9, rel=1e-15)

    def test_sigma_to_zero(self):
        tp = trigger_params((1.0, 2.0, 3.0), 1e-12, 1.0, -1e-4, 1.0)
        assert tp.betas == pytest.approx((1.0, 2.0, 3.0))

    @pytest.mark.parametrize("sigma,m0", [(0.0, -1e-4), (1.0, -1e-4), (0.1, 0.0), (0.1, 1e-3)])
    def test_invalid(self, sigma, m0):
        with pytest.raises(ValueError):
            trigger_params((1, 1, 1), sigma, 1.0, m0, 1.0)


def _reference(a1, a2, a3):
    with mpmath.workdps(30):
        return float(mpmath.quad(lambda s: 1 / (a1 * s * s + a2 * s + a3), [0, 1]))


class TestDwellTime:
    def test_paper_values(self, cert):
        _, _, _, tau1 = dwell_time(cert.rho1, 48.3, 0.1, 1.0)
        _, _, _, tau100 = dwell_time(cert.rho1, 48.3, 0.1, 100.0)
        assert tau1 == pytest.approx(2.2e-3, rel=0.05)
        assert tau100 == pytest.approx(7.2e-4, rel=0.05)

    def test_coefficients(self):
        a1, a2, a3, tau = dwell_time(0.5, 40.0, 0.2, 3.0)
        assert a1 == pytest.approx(8.0)
        assert a2 == pytest.approx(1 + 0.5 + 2 * 0.8 * 40 + 3)
        assert a3 == pytest.approx((1 + 0.5 + 0.8 * 40 + 3) * 0.8 / 0.2)
        assert 0 < tau < 1 / a3

    @settings(max_examples=1000, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_closed_form_matches_quadrature(self, a1, a2, a3):
        assert quadratic_reciprocal_integral(a1, a2, a3) == pytest.approx(_reference(a1, a2, a3), rel=1e-12)

    def test_all_discriminant_cases(self):
        for a1, a2, a3 in [(1.0, 10.0, 1.0), (1.0, 2.0, 1.0), (4.0, 1.0, 3.0)]:
            assert quadratic_reciprocal_integral(a1, a2, a3) == pytest.approx(_reference(a1, a2, a3), rel=1e-12)

    def test_monotone(self):
        base = dwell_time(0.6, 48.3, 0.1, 1.0)[3]
        assert dwell_time(0.7, 48.3, 0.1, 1.0)[3] < base
        assert dwell_time(0.6, 50.0, 0.1, 1.0)[3] < base
        assert dwell_time(0.6, 48.3, 0.1, 2.0)[3] < base

    @pytest.mark.parametrize("args", [(0, 1, 0.1, 1), (1, 0, 0.1, 1), (1, 1, 0.1, 0), (1, 1, 1.0, 1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            dwell_time(*args)


class TestLyapunov:
    def test_rho_arithmetic(self, cert):
        assert cert.lyap.rho == pytest.approx(48.3, abs=1e-9)
        assert cert.trigger.rho == pytest.approx(48.3, abs=1e-9)

    def test_tiny_B_fails(self, cert):
        cand = LyapunovCandidate(B=0.001, kappa1=2.1, kappa2=312.5, kappa3=59.4)
        res = lyapunov_feasibility(P, cert.trigger.betas, cert.g_norm_sq, cand, 1.0)
        assert not res.ok
        assert "B-inequality" in res.violated

    def test_fallback_candidate_is_feasible_and_idempotent(self, cert):
        cand = cert.feasible_candidate
        assert cand is not None
        res = lyapunov_feasibility(P, cert.trigger.betas, cert.g_norm_sq, cand, 1.0)
        assert res.ok and res.b1 > 0 and res.b2 > 0
        assert res.sapie1 > MARGIN and res.sapie2 > MARGIN
        again = lyapunov_feasibility(P, cert.trigger.betas, cert.g_norm_sq, cand, 1.0, A=res.A)
        assert again.ok and again.A == res.A
        assert res.varrho == pytest.approx(min(res.b1, res.b2, 1.0) / max(res.A / 2, res.B / 2, 1.0))

    def test_paper_candidate_with_reported_constants(self):
        # with the published beta and |g|^2 the published candidate passes
        res = lyapunov_feasibility(P, (4.6, 2.3, 3.7), 0.0297, PAPER_CANDIDATE, 1.0)
        assert res.ok
        assert res.rho == pytest.approx(48.3, abs=1e-9)

    def test_no_B_when_bracket_negative(self, cert):
        cand = LyapunovCandidate(B=1.0, kappa1=0.01, kappa2=312.5, kappa3=59.4)
        assert minimal_feasible_candidate(P, cert.trigger.betas, cert.g_norm_sq, cand) is None

    def test_invalid_candidate(self, cert):
        with pytest.raises(ValueError):
            lyapunov_feasibility(P, cert.trigger.betas, cert.g_norm_sq, LyapunovCandidate(-1, 1, 1, 1), 1.0)


class TestContinuousTime:
    def test_paper_feasible_and_self_check(self, cert):
        ct = ct_feasibility(P, cert.g_norm_sq)
        assert ct.ok
        assert ct_check(P, cert.g_norm_sq, ct.delta1, ct.delta2, ct.H)
        assert ct.vartheta1 > 0 and ct.vartheta2 > 0 and ct.decay_rate > 0

    def test_marginal_parameters_report(self):
        p = SystemParams(eps=0.1, lam=0.25, q=1.76)
        assert p.r == pytest.approx(0.51)
        res = ct_feasibility(p, 0.05)
        if res.ok:
            assert ct_check(p, 0.05, res.delta1, res.delta2, res.H)

    def test_assumption_violated(self):
        res = ct_feasibility(SystemParams(eps=0.1, lam=0.25, q=1.5), 0.01)
        assert not res.ok


def test_certificate_invariants(cert):
    assert cert.a1 > 0 and cert.a2 > 0 and cert.a3 > 0
    assert cert.tau > 0
    assert cert.P_tilde >= 1 and cert.L_tilde >= 1
    assert 0 < cert.mu < math.pi / 2
    d = cert.to_dict()
    assert d["open_loop_rate"] == pytest.approx(0.125, abs=1e-3)
