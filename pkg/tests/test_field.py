import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpnlab.field import (FieldContext, SingularityError, dump_grid, field_at, field_char_analytic,
                          field_on_grid, field_on_points, free_covariance, green_convolve, green_inner,
                          pair_field, pair_field_riemann, read_grid, sample_field_pairings)
from cpnlab.kernel import KernelParams, green_evaluate
from cpnlab.noise import Box, BoxIndicator, ChargeConfiguration, ChargeLaw, GaussianBump, sample_configuration
from cpnlab.quadrature import integrate_box
from cpnlab.stats import RngStream

P = KernelParams(2, 1.0)
BOX = Box((0.0, 0.0), (4.0, 4.0))
SYM = ChargeLaw.two_point_symmetric(1.0)
F = GaussianBump((2.0, 2.0), 0.5)
H = GaussianBump((1.0, 3.0), 0.4, -0.7)


def one(y, s=1.0):
    return ChargeConfiguration(BOX, np.array([y]), np.array([s]))


def test_field_at_examples():
    assert field_at(FieldContext(P, ChargeConfiguration.empty(BOX)), (1.0, 1.0)) == 0.0
    assert field_at(FieldContext(P, one((1.0, 1.0))), (1.0, 2.5)) == pytest.approx(green_evaluate(P, 1.5), rel=1e-14)
    two = one((1.0, 1.0)).merge(one((3.0, 2.0), -2.0))
    x = (2.0, 2.0)
    expect = field_at(FieldContext(P, one((1.0, 1.0))), x) + field_at(FieldContext(P, one((3.0, 2.0), -2.0)), x)
    assert field_at(FieldContext(P, two), x) == pytest.approx(expect, rel=1e-14)


def test_singularity_guard():
    with pytest.raises(SingularityError):
        field_at(FieldContext(P, one((1.0, 1.0))), (1.0, 1.0 + 1e-13))


def test_rescaled_context():
    ctx = FieldContext(P, one((1.0, 1.0), 2.0), rescale_z=4.0)
    assert field_at(ctx, (1.0, 2.0)) == pytest.approx(green_evaluate(P, 1.0), rel=1e-14)
    with pytest.raises(ValueError):
        FieldContext(P, one((1.0, 1.0)), rescale_z=0.0)


@given(st.integers(0, 2 ** 31))
def test_table_field_matches_direct_sum(seed):
    cfg = sample_configuration(BOX, 1.0, SYM, RngStream(seed))
    x = np.array([[0.3, 3.7], [2.2, 1.1]])
    got = field_on_points(FieldContext(P, cfg), x)
    ref = [field_at(FieldContext(P, cfg), p) for p in x]
    assert np.allclose(got, ref, rtol=1e-7, atol=1e-12)


def test_grid_dump_roundtrip():
    cfg = sample_configuration(BOX, 1.0, SYM, RngStream(2))
    vals = field_on_grid(FieldContext(P, cfg), BOX, (5, 4))
    buf = io.StringIO()
    dump_grid(buf, BOX, (5, 4), vals)
    box, shape, back = read_grid(io.StringIO(buf.getvalue()))
    assert box == BOX and shape == (5, 4) and np.array_equal(back, vals)


def test_path_regularity_under_refinement():
    cfg = sample_configuration(BOX, 1.0, SYM, RngStream(3))
    ctx = FieldContext(P, cfg)
    l1 = []
    for n in (64, 128, 256):
        vals = field_on_grid(ctx, BOX, (n, n))
        assert np.all(np.isfinite(vals))
        l1.append(float(np.abs(vals).mean()) * BOX.volume)
    assert abs(l1[2] - l1[1]) < abs(l1[1] - l1[0]) + 0.02 * l1[2]


# -- pairings ------------------------------------------------------------------

def test_green_convolve_bump_matches_quadrature():
    y = np.array([[2.3, 1.9], [0.0, 0.0]])
    got = green_convolve(F, P, y)

    def direct(p):
        # polar coordinates about p: r G(r) = exp(-r)/(2 pi) is smooth
        x, w = np.polynomial.legendre.leggauss(80)
        r = 7.5 * (x + 1.0)
        wr = 7.5 * w
        th = np.linspace(0, 2 * np.pi, 128, endpoint=False)
        R, T = np.meshgrid(r, th, indexing="ij")
        pts = np.stack([p[0] + R.ravel() * np.cos(T.ravel()), p[1] + R.ravel() * np.sin(T.ravel())], axis=1)
        vals = (F(pts) * np.exp(-R.ravel()) / (2 * np.pi)).reshape(R.shape)
        return float(wr @ vals.mean(axis=1)) * 2 * np.pi

    for g, p in zip(got, y):
        assert g == pytest.approx(direct(p), rel=1e-5)


def test_pair_field_linear():
    cfg = sample_configuration(BOX, 1.0, SYM, RngStream(4))
    a = pair_field(FieldContext(P, cfg), F)
    assert pair_field(FieldContext(P, cfg.scaled(-3.0)), F) == pytest.approx(-3.0 * a, rel=1e-13)
    assert pair_field(FieldContext(P, ChargeConfiguration.empty(BOX)), F) == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_two_route_pairing(seed):
    cfg = sample_configuration(Box((1.0, 1.0), (3.0, 3.0)), 0.75, SYM, RngStream(seed, 99))
    ctx = FieldContext(P, cfg)
    f = GaussianBump((2.0, 2.0), 0.6)
    fast = pair_field(ctx, f)
    slow = pair_field_riemann(ctx, f, Box((-1.0, -1.0), (5.0, 5.0)), 0.05)
    # the grid route is off by up to ~7e-4 per particle at h = 0.05 and halves with h
    assert slow == pytest.approx(fast, abs=1e-3 * cfg.n + 1e-9)


def test_pair_field_box_indicator_route():
    cfg = one((2.0, 2.0))
    f = BoxIndicator(Box((1.0, 1.0), (3.0, 3.0)))
    fast = pair_field(FieldContext(P, cfg), f)
    # the particle sits on cell corners at every spacing; the grid route converges to the fast one
    errs = [abs(pair_field_riemann(FieldContext(P, cfg), f, Box((1.0, 1.0), (3.0, 3.0)), h) - fast)
            for h in (0.1, 0.04, 0.02)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3 * fast


# -- characteristic functional and covariance ---------------------------------

def test_field_cf_trivial():
    assert field_char_analytic(BOX, 2.0, SYM, P, F, 0.0) == 1.0


@given(st.floats(-10, 10))
def test_field_cf_modulus(t):
    law = ChargeLaw.discrete([(-1.0, 0.3), (2.0, 0.7)])
    assert abs(field_char_analytic(BOX, 2.0, law, P, F, t)) <= 1 + 1e-12


def test_rescaled_cf_near_gaussian_at_large_z():
    pad = BOX.padded(8.0)
    q = green_inner(P, F, F)
    t = np.linspace(-5, 5, 21) / math.sqrt(q)
    cf = field_char_analytic(pad, 1e4, SYM, P, F, t, rescaled=True)
    # the padded box misses a little of int (G*f)^2, so compare to the box-limited variance
    qbox = green_inner(P, F, F, pad)
    assert qbox == pytest.approx(q, rel=1e-4)
    assert np.max(np.abs(cf - np.exp(-0.5 * q * t * t))) < 5e-3


def test_free_covariance_properties():
    assert free_covariance(P, F, F, 2.0, SYM) >= 0
    h1, h2 = GaussianBump((1.0, 1.0), 0.3), GaussianBump((3.0, 2.0), 0.7, 2.0)
    lhs = free_covariance(P, F, h1 + h2, 2.0, SYM)
    rhs = free_covariance(P, F, h1, 2.0, SYM) + free_covariance(P, F, h2, 2.0, SYM)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert free_covariance(P, F, H, 2.0, SYM) == pytest.approx(free_covariance(P, H, F, 2.0, SYM), rel=1e-12)


def test_full_space_covariance_matches_box_quadrature():
    big = Box((-10.0, -10.0), (14.0, 14.0))
    assert green_inner(P, F, H) == pytest.approx(green_inner(P, F, H, big), rel=1e-6)


@pytest.mark.slow
def test_empirical_covariance():
    n = 100_000
    rng = RngStream(40)
    # one set of draws feeds both pairings: sample the weights G*f and G*h jointly
    from cpnlab.noise import sample_pairings

    def weight(x):
        return green_convolve(F, P, x) + 1j * green_convolve(H, P, x)

    w = sample_pairings(BOX, 2.0, SYM, lambda x: np.ones(len(x)), rng, 1)  # warm the table cache
    del w
    vals = np.empty(n, dtype=np.complex128)
    for i in range(n):
        cfg = sample_configuration(BOX, 2.0, SYM, rng)
        vals[i] = np.dot(cfg.charges, weight(cfg.positions)) if cfg.n else 0.0
    a, b = vals.real, vals.imag
    prod = (a - a.mean()) * (b - b.mean())
    ref = free_covariance(P, F, H, 2.0, SYM, BOX)
    assert abs(prod.mean() - ref) < 3 * prod.std() / math.sqrt(n)


def test_sample_field_pairings_variance():
    x = sample_field_pairings(BOX, 2.0, SYM, P, F, RngStream(41), 20_000)
    var = free_covariance(P, F, F, 2.0, SYM, BOX)
    dev = x - x.mean()
    se = math.sqrt(np.mean(dev ** 4) / x.size)
    assert abs(x.var() - var) < 3 * se
