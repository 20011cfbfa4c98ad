import math
from fractions import Fraction

import numpy as np
import pytest

from rdetc.analysis import open_loop_mu
from rdetc.kernels import PAPER_PARAMS, SystemParams, observer_gains
from rdetc.solver import (
    ObserverStepper,
    PlantStepper,
    build_grid,
    init_profile,
    l2_norm,
    step_observer,
    step_plant,
)
from oracles import exact_poly_l2_sq

P = PAPER_PARAMS


@pytest.fixture(scope="module")
def gains162():
    return observer_gains(P, 162)


class TestGrid:
    def test_paper_grid(self):
        g = build_grid(162)
        assert g.h == pytest.approx(0.0062, abs=1e-4)
        assert g.dt == g.h
        assert g.h * (g.n_nodes - 1) == pytest.approx(1.0, abs=1e-15)
        assert g.x[-1] == 1.0

    def test_smallest(self):
        assert build_grid(3).h == 0.5

    @pytest.mark.parametrize("n,dt", [(2, 0.1), (10, 0.0), (10, -1.0), (5.5, 0.1)])
    def test_invalid(self, n, dt):
        with pytest.raises(ValueError):
            build_grid(n, dt)


class TestProfiles:
    def test_paper_profiles(self):
        g = build_grid(5)
        assert init_profile("paper_u0", g)[2] == pytest.approx(0.625)
        assert init_profile("paper_uhat0", g)[0] == 0.0
        assert init_profile("sweep", g, n=2)[2] == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(init_profile("sweep", g, n=3, scale=2.0), 2 * init_profile("sweep", g, n=3))

    def test_samples(self):
        g = build_grid(4)
        assert np.array_equal(init_profile("samples", g, samples=[1, 2, 3, 4]), [1.0, 2.0, 3.0, 4.0])
        with pytest.raises(ValueError):
            init_profile("samples", g, samples=[1, 2])
        with pytest.raises(ValueError):
            init_profile("samples", g, samples=[1, 2, math.nan, 4])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            init_profile("square", build_grid(5))
        with pytest.raises(ValueError):
            init_profile("sweep", build_grid(5), n=0)


class TestNorm:
    def test_constant_and_linear(self):
        g = build_grid(101)
        assert l2_norm(np.ones(101), g) == pytest.approx(1.0, abs=1e-14)
        assert l2_norm(g.x, g) == pytest.approx(1 / math.sqrt(3), abs=g.h**2)

    def test_paper_u0_exact(self):
        # 10 x^2 (x-1)^2 = 10 x^2 - 20 x^3 + 10 x^4
        exact = math.sqrt(exact_poly_l2_sq([Fraction(0), Fraction(0), Fraction(10), Fraction(-20), Fraction(10)]))
        for n in (81, 161):
            g = build_grid(n)
            assert abs(l2_norm(init_profile("paper_u0", g), g) - exact) <= g.h**2

    def test_batch_and_mismatch(self):
        g = build_grid(11)
        f = np.stack([np.ones(11), 2 * np.ones(11)], axis=1)
        assert np.allclose(l2_norm(f, g), [1.0, 2.0])
        with pytest.raises(ValueError):
            l2_norm(np.ones(12), g)


def exact_mode(nu, t, x, params):
    a = params.lam - params.eps * nu * nu
    return math.exp(a * t) * np.cos(nu * x), math.exp(a * t) * (params.q * math.cos(nu) - nu * math.sin(nu))


def run_exact(n, dt, T, nu, params):
    g = build_grid(n, dt)
    stepper = PlantStepper(g, params)
    u, _ = exact_mode(nu, 0.0, g.x, params)
    steps = int(round(T / dt))
    for k in range(1, steps + 1):
        _, U = exact_mode(nu, k * dt, g.x, params)
        u = stepper.step(u, U)
    ref, _ = exact_mode(nu, steps * dt, g.x, params)
    return np.max(np.abs(u - ref))


class TestPlant:
    def test_equilibrium(self):
        g = build_grid(21)
        assert np.array_equal(step_plant(np.zeros(21), 0.0, g, P), np.zeros(21))

    def test_open_loop_growth_rate(self):
        g = build_grid(162)
        stepper = PlantStepper(g, P)
        u = init_profile("paper_u0", g)
        norms = []
        for _ in range(int(round(40 / g.dt))):
            u = stepper.step(u, 0.0)
            norms.append(l2_norm(u, g))
        t = g.dt * np.arange(1, len(norms) + 1)
        tail = t >= 20
        rate = np.polyfit(t[tail], np.log(np.array(norms)[tail]), 1)[0]
        expected = P.lam - P.eps * open_loop_mu(P.q) ** 2
        assert rate == pytest.approx(expected, rel=0.1)
        assert np.all(np.diff(norms)[tail[1:]] > 0)

    def test_pure_diffusion_dissipates(self):
        params = SystemParams(eps=0.1, lam=1e-12, q=2.3)
        g = build_grid(81)
        stepper = PlantStepper(g, params)
        u = init_profile("paper_u0", g)
        n0 = l2_norm(u, g)
        for _ in range(500):
            u = stepper.step(u, 0.0)
            assert l2_norm(u, g) <= n0

    def test_spatial_order(self):
        e1 = run_exact(21, 1e-4, 0.05, 1.3, P)
        e2 = run_exact(41, 1e-4, 0.05, 1.3, P)
        assert 3.3 < e1 / e2 < 4.7

    def test_temporal_order(self):
        e1 = run_exact(801, 0.02, 1.0, 1.3, P)
        e2 = run_exact(801, 0.01, 1.0, 1.3, P)
        assert 1.8 < e1 / e2 < 2.2

    def test_large_step_stays_finite(self):
        g = build_grid(162, 1.0)
        stepper = PlantStepper(g, P)
        u = init_profile("paper_u0", g)
        for _ in range(20):
            u = stepper.step(u, 0.0)
        assert np.all(np.isfinite(u))
        # implicit Euler amplification is below exp(lam t) per step
        assert l2_norm(u, g) <= math.exp(P.lam * 20) * l2_norm(init_profile("paper_u0", g), g)

    def test_batch_matches_columns(self):
        g = build_grid(41)
        stepper = PlantStepper(g, P)
        B = np.stack([init_profile("sweep", g, n=k) for k in (1, 2, 3)], axis=1)
        U = np.array([0.0, 0.5, -1.0])
        out = stepper.step(B, U)
        for j in range(3):
            assert np.array_equal(out[:, j], stepper.step(B[:, j], U[j]))


class TestObserver:
    def test_matches_plant_when_error_is_zero(self, gains162):
        g = build_grid(162)
        u = init_profile("paper_u0", g)
        plant = step_plant(u, 0.7, g, P)
        obs = step_observer(u, 0.7, plant[0], g, P, gains162)
        assert np.max(np.abs(plant - obs)) < 1e-13

    def test_error_decay_rate(self, gains162):
        g = build_grid(162)
        plant, observer = PlantStepper(g, P), ObserverStepper(g, P, gains162)
        u, uh = init_profile("paper_u0", g), init_profile("paper_uhat0", g)
        errs = []
        for _ in range(int(round(40 / g.dt))):
            u = plant.step(u, 0.0)
            uh = observer.step(uh, 0.0, u[0])
            errs.append(l2_norm(u - uh, g))
        errs = np.array(errs)
        t = g.dt * np.arange(1, errs.size + 1)
        assert np.all(np.diff(errs) < 0)
        tail = t >= 10
        rate = -np.polyfit(t[tail], np.log(errs[tail]), 1)[0]
        assert rate == pytest.approx(P.eps * open_loop_mu(P.q) ** 2, rel=0.15)

    def test_zero_error_invariance(self, gains162):
        g = build_grid(162)
        plant, observer = PlantStepper(g, P), ObserverStepper(g, P, gains162)
        u = init_profile("paper_u0", g)
        uh = u.copy()
        for k in range(1000):
            U = math.sin(0.01 * k)
            u = plant.step(u, U)
            uh = observer.step(uh, U, u[0])
            assert np.max(np.abs(u - uh)) < 1e-10

    def test_error_is_independent_of_input(self, gains162):
        g = build_grid(162)
        plant, observer = PlantStepper(g, P), ObserverStepper(g, P, gains162)
        runs = []
        for U in (0.0, 0.8):
            u, uh = init_profile("paper_u0", g), init_profile("paper_uhat0", g)
            errs = []
            for _ in range(1000):
                u = plant.step(u, U)
                uh = observer.step(uh, U, u[0])
                errs.append(u - uh)
            runs.append(np.array(errs))
        assert np.max(np.abs(runs[0] - runs[1])) <= 1e-12

    def test_gain_grid_mismatch(self):
        with pytest.raises(ValueError):
            ObserverStepper(build_grid(41), P, observer_gains(P, 21))

    def test_batch_matches_columns(self, gains162):
        g = build_grid(162)
        observer = ObserverStepper(g, P, gains162)
        B = np.stack([init_profile("sweep", g, n=k) for k in (1, 4)], axis=1)
        out = observer.step(B, np.array([0.1, 0.2]), np.array([0.3, -0.1]))
        assert np.allclose(out[:, 1], observer.step(B[:, 1], 0.2, -0.1), atol=1e-15)
