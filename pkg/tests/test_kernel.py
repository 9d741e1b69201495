import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpnlab.kernel import (KernelError, KernelParams, KernelTable, MollifierParams, build_mollified_table,
                           build_table, covariance_kernel, default_table, green_evaluate,
                           green_fourier_quadrature, green_mollified, green_mollified_hankel,
                           green_subordination, near_origin_coefficient, radial_integral)

dims = st.integers(2, 6)
masses = st.floats(0.05, 20.0)
radii = st.floats(1e-4, 30.0)


# frozen from the subordination and Fourier oracles
FROZEN = {
    (3, 1.0, 1.0): 0.03049297650323244,
    (2, 1.0, 1.0): math.exp(-1.0) / (2 * math.pi),
    (4, 1.0, 2.0): math.exp(-2.0) * 1.5 / (16 * math.pi ** 2),
}


@pytest.mark.parametrize("key", sorted(FROZEN))
def test_frozen_values(key):
    d, m, r = key
    assert green_evaluate(KernelParams(d, m), r) == pytest.approx(FROZEN[key], rel=1e-13)


def test_documented_numbers():
    assert green_evaluate(KernelParams(2, 1.0), 1.0) == pytest.approx(0.0585498, abs=5e-8)
    # the quoted 1.2853e-3 is rounded; the elementary form gives 1.28553e-3
    assert green_evaluate(KernelParams(4, 1.0), 2.0) == pytest.approx(1.2853e-3, rel=3e-4)


@given(masses, st.floats(1e-3, 40.0))
def test_elementary_forms(m, r):
    p2, p4 = KernelParams(2, m), KernelParams(4, m)
    assert green_evaluate(p2, r) == pytest.approx(math.exp(-m * r) / (2 * math.pi * r), rel=1e-12)
    d4 = m * math.exp(-m * r) * (1 + 1 / (m * r)) / (4 * math.pi ** 2 * r ** 2)
    assert green_evaluate(p4, r) == pytest.approx(d4, rel=1e-12)


@given(dims, masses, st.floats(1e-3, 20.0))
def test_dimensional_scaling(d, m, r):
    lhs = green_evaluate(KernelParams(d, m), r)
    rhs = m ** (d - 1) * green_evaluate(KernelParams(d, 1.0), m * r)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@given(dims, masses, radii, radii)
def test_positive_and_decreasing(d, m, r1, r2):
    p = KernelParams(d, m)
    a, b = sorted((r1, r2))
    ga, gb = green_evaluate(p, a), green_evaluate(p, b)
    assert ga > 0 or m * a > 700
    assert ga >= gb


@pytest.mark.parametrize("d", [2, 3, 4, 5])
@pytest.mark.parametrize("r", [0.05, 0.7, 3.0])
def test_three_routes_agree(d, r):
    p = KernelParams(d, 1.3)
    g = green_evaluate(p, r)
    assert green_subordination(p, r) == pytest.approx(g, rel=1e-10)
    assert green_fourier_quadrature(p, r) == pytest.approx(g, rel=1e-6)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_near_origin_constant(d):
    p = KernelParams(d, 1.0)
    r = 1e-7
    assert green_evaluate(p, r) * r ** (d - 1) == pytest.approx(near_origin_coefficient(d), rel=1e-5)


def test_invalid_inputs():
    with pytest.raises(KernelError):
        KernelParams(1, 1.0)
    with pytest.raises(KernelError):
        KernelParams(3, 0.0)
    with pytest.raises(KernelError):
        green_evaluate(KernelParams(2, 1.0), 0.0)
    with pytest.raises(KernelError):
        MollifierParams(0.0)
    with pytest.raises(KernelError):
        build_table(KernelParams(2, 1.0), 1.0, 0.5, 64)
    with pytest.raises(KernelError):
        build_table(KernelParams(2, 1.0), 0.1, 1.0, 8)


# -- mollified kernel ------------------------------------------------------------

def test_mollified_finite_at_origin_and_two_routes():
    p, moll = KernelParams(2, 1.0), MollifierParams(0.5)
    g0 = green_mollified(p, moll, 0.0)
    assert math.isfinite(g0) and g0 > 0
    assert g0 == pytest.approx(0.27895547038931034, rel=1e-12)
    for r in (0.0, 0.3, 1.0, 2.5):
        assert green_mollified(p, moll, r) == pytest.approx(green_mollified_hankel(p, moll, r), rel=1e-9)


def test_mollified_converges_to_bare():
    p = KernelParams(2, 1.0)
    g = green_evaluate(p, 1.0)
    assert abs(green_mollified(p, MollifierParams(0.01), 1.0) / g - 1) < 1e-3


@given(st.floats(0.05, 2.0), st.floats(0.0, 10.0))
def test_mollified_bounded_by_origin(eps, r):
    p, moll = KernelParams(3, 1.0), MollifierParams(eps)
    assert green_mollified(p, moll, r) <= green_mollified(p, moll, 0.0) * (1 + 1e-12)


def test_covariance_kernel_d2_is_k0():
    from scipy.special import k0

    p = KernelParams(2, 1.0)
    for r in (0.2, 1.0, 3.0):
        assert covariance_kernel(p, r) == pytest.approx(k0(r) / (2 * math.pi), rel=1e-10)


# -- integrability -------------------------------------------------------------

@pytest.mark.parametrize("d", [2, 3, 4])
def test_locally_integrable_not_square_integrable(d):
    p = KernelParams(d, 1.0)
    first = radial_integral(lambda r: green_evaluate(p, r), d, 1.0)
    assert math.isfinite(first) and first > 0
    # G^2 ~ r^(2-2d): shrinking the inner cutoff grows the integral without bound
    def sq(cut):
        return radial_integral(lambda r: np.where(r > cut, green_evaluate(p, np.maximum(r, cut)) ** 2, 0.0),
                               d, 1.0, breakpoints=(cut,))
    vals = [sq(c) for c in (1e-2, 1e-3, 1e-4)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] - vals[1] > 0.5 * (vals[1] - vals[0])


# -- tables --------------------------------------------------------------------

def test_table_nodes_are_exact():
    t = build_table(KernelParams(3, 1.0), 1e-3, 20.0, 64)
    assert np.array_equal(t(t.radii), t.values)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_table_midpoints_within_tolerance(d):
    t = build_table(KernelParams(d, 1.0), 1e-3, 20.0, 64)
    assert t.midpoint_error() < 1e-6


def test_table_tails():
    p = KernelParams(3, 1.0)
    t = build_table(p, 1e-3, 20.0, 64)
    far = t(2 * t.r_max)
    assert 0 < far < t(t.r_max)
    assert far == pytest.approx(green_evaluate(p, 40.0), rel=0.05)
    near = t(1e-5)
    assert near == pytest.approx(green_evaluate(p, 1e-5), rel=1e-4)


def test_table_values_must_decrease():
    with pytest.raises(KernelError):
        KernelTable(KernelParams(2, 1.0), np.geomspace(1, 2, 8), np.linspace(1, 2, 8))


def test_table_dump_load_roundtrip(tmp_path):
    t = build_table(KernelParams(3, 0.7), 1e-3, 20.0, 32)
    path = tmp_path / "g.tab"
    t.dump(path)
    back = KernelTable.load(path)
    assert np.array_equal(back.radii, t.radii) and np.array_equal(back.values, t.values)
    r = np.geomspace(1e-4, 40, 50)
    assert np.array_equal(back(r), t(r))
    first = path.read_text().splitlines()[0]
    assert "d=3" in first and "n_points=" in first


def test_mollified_table_matches_direct():
    t = build_mollified_table(KernelParams(2, 1.0), MollifierParams(0.5))
    assert t.midpoint_error() < 1e-8
    assert t(0.0) == pytest.approx(green_mollified(KernelParams(2, 1.0), MollifierParams(0.5), 0.0), rel=1e-12)


@given(st.floats(1e-5, 50.0))
def test_table_inverse_roundtrip(r):
    t = default_table(2, 1.0)
    g = t(r)
    assert float(t.inverse(np.array([g]))[0]) == pytest.approx(r, rel=1e-9)


@given(st.floats(1e-4, 50.0))
def test_table_derivative_matches_closed_form(r):
    t = default_table(2, 1.0)
    exact = -math.exp(-r) * (1 + r) / (2 * math.pi * r * r)
    assert float(t.derivative(np.array([r]))[0]) == pytest.approx(exact, rel=1e-5)
