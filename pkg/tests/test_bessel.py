import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdetc.bessel import bessel_first_kind, bessel_modified_first_kind, bessel_ratio
from oracles import bessel_series


def test_values_at_origin():
    assert bessel_modified_first_kind(0, 0.0) == 1.0
    assert bessel_modified_first_kind(1, 0.0) == 0.0
    assert bessel_first_kind(0, 0.0) == 1.0
    assert bessel_first_kind(1, 0.0) == 0.0


def test_series_oracle_points():
    z = 1.5811
    assert bessel_modified_first_kind(1, z) == pytest.approx(bessel_series(1, z, modified=True), rel=1e-12)
    z = 2.4048
    assert bessel_first_kind(1, z) == pytest.approx(bessel_series(1, z, modified=False), rel=1e-12)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_relative_accuracy_on_0_50(order):
    for z in np.linspace(0.01, 50, 200):
        ref_i = float(mpmath.besseli(order, mpmath.mpf(z)))
        assert abs(bessel_modified_first_kind(order, z) - ref_i) <= 1e-12 * abs(ref_i)
    # J has zeros, so compare against the scale of the envelope there
    for z in np.linspace(0.01, 50, 200):
        ref_j = float(mpmath.besselj(order, mpmath.mpf(z)))
        assert abs(bessel_first_kind(order, z) - ref_j) <= 1e-12 * max(abs(ref_j), 1 / math.sqrt(z + 1))


def test_array_input():
    z = np.array([0.0, 0.5, 3.0])
    out = bessel_modified_first_kind(2, z)
    assert out.shape == (3,)
    assert out[0] == 0.0


@pytest.mark.parametrize("bad", [-1e-9, -2.0, math.nan, math.inf])
def test_domain_errors(bad):
    with pytest.raises(ValueError):
        bessel_modified_first_kind(1, bad)
    with pytest.raises(ValueError):
        bessel_first_kind(0, bad)


@pytest.mark.parametrize("order", [3, -1])
def test_order_rejected(order):
    with pytest.raises(ValueError):
        bessel_first_kind(order, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-6, max_value=900.0), st.integers(min_value=0, max_value=4))
def test_ratio_matches_mpmath_both_signs(s, m):
    z = mpmath.sqrt(mpmath.mpf(s))
    pos = mpmath.besseli(m, z) / z**m
    neg = mpmath.besselj(m, z) / z**m
    assert bessel_ratio(m, s) == pytest.approx(float(pos), rel=1e-12)
    scale = max(abs(float(neg)), float(1 / (z ** (m + 0.5) + 1)))
    assert abs(bessel_ratio(m, -s) - float(neg)) <= 1e-11 * scale


def test_ratio_limit_and_continuity_at_series_switch():
    for m in range(5):
        assert bessel_ratio(m, 0.0) == 1 / (2**m * math.factorial(m))
        lo, hi = bessel_ratio(m, 16.0), bessel_ratio(m, np.nextafter(16.0, 20.0))
        assert hi == pytest.approx(lo, rel=1e-13)
