"""Scaling-limit experiments for convoluted Poisson noise.

* CLT sweeps: characteristic functions of noise/field pairings with charges
  s/sqrt(z), against the Gaussian limit.
* Block-spin identity: activity z with charges s/sqrt(z) at mass m equals
  activity 1 with unscaled charges at mass m/alpha, alpha = z^(1/d), for the
  test function f~(y) = alpha^((d-2)/2 - d) f(y/alpha).
* First terms A_n of the expansion of E[exp(i t <phi,f>) exp(-lambda int v)].
* Triviality: the free expectation N(z) of cos(alpha phi^z) and Monte Carlo
  estimates of the box-integrated cosine density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from ._backend import core
from .field import green_convolve, green_inner, sample_field_pairings
from .kernel import KernelParams, covariance_kernel, default_table, mollified_table
from .noise import (Box, ChargeLaw, FiniteSum, GaussianBump, TestFunction, lk_exponent,
                    noise_char_analytic, sample_configuration, sample_pairings)
from .potential import RenormalizedCosine, Trigonometric, renorm_normalizer
from .quadrature import tensor_rule
from .stats import RngStream, ecf_estimate, ecf_stderr


class ScalingError(ValueError):
    pass


def _params(kernel) -> KernelParams:
    return kernel if isinstance(kernel, KernelParams) else kernel.params


# ---------------------------------------------------------------------------
# CLT sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalingSweepSpec:
    z_list: tuple
    target: str
    f: TestFunction
    t_grid: Optional[tuple] = None
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        z = tuple(float(v) for v in self.z_list)
        if not z or any(v <= 0 for v in z) or any(b <= a for a, b in zip(z, z[1:])):
            raise ScalingError("z_list must be strictly increasing and positive")
        object.__setattr__(self, "z_list", z)
        if self.target not in ("noise", "field"):
            raise ScalingError(f"target must be 'noise' or 'field', got {self.target!r}")
        if self.t_grid is not None:
            t = tuple(float(v) for v in self.t_grid)
            if not all(math.isfinite(v) for v in t):
                raise ScalingError("t grid must be finite")
            object.__setattr__(self, "t_grid", t)
        if self.samples < 100:
            raise ScalingError("need at least 100 samples per z")


def default_t_grid(sd: float, n: int = 21, span: float = 5.0) -> np.ndarray:
    """n symmetric points on [-span, span] / sd (includes 0 for odd n)."""
    return np.linspace(-span, span, n) / sd


def limit_variance(target: str, box: Box, law: ChargeLaw, f: TestFunction, kernel=None) -> float:
    """Variance of the Gaussian limit of the rescaled pairing."""
    if target == "noise":
        return law.second_moment * f.integral_sq(box)
    return law.second_moment * green_inner(_params(kernel), f, f, box)


@dataclass
class SweepPoint:
    z: float
    t: np.ndarray
    ecf: np.ndarray
    stderr: np.ndarray
    radius: float
    limit: np.ndarray
    exact: np.ndarray

    @property
    def distance(self) -> float:
        """D(z) = max_t |ECF_z(t) - CF_inf(t)|."""
        return float(np.max(np.abs(self.ecf - self.limit)))

    @property
    def distance_stderr(self) -> float:
        return float(self.stderr[int(np.argmax(np.abs(self.ecf - self.limit)))])

    @property
    def exact_distance(self) -> float:
        return float(np.max(np.abs(self.exact - self.limit)))


def sweep_point(spec: ScalingSweepSpec, k: int, box: Box, law: ChargeLaw,
                kernel=None, exact: bool = True) -> SweepPoint:
    """The k-th z of the sweep, drawn from substream k of ``spec.seed``."""
    if abs(law.mean) > 1e-12:
        raise ScalingError("the CLT sweep needs a centred charge law (E[S] = 0)")
    if spec.target == "field" and kernel is None:
        raise ScalingError("field target needs a kernel")
    var = limit_variance(spec.target, box, law, spec.f, kernel)
    t = np.asarray(spec.t_grid) if spec.t_grid is not None else default_t_grid(math.sqrt(var))
    limit = np.exp(-0.5 * var * t * t).astype(np.complex128)
    z = spec.z_list[k]
    rng = RngStream(spec.seed).substream(k)
    scale = 1.0 / math.sqrt(z)
    if spec.target == "noise":
        x = sample_pairings(box, z, law, spec.f, rng, spec.samples, charge_scale=scale)
        ex = noise_char_analytic(box, z, law, spec.f, t, charge_scale=scale) if exact else limit * np.nan
    else:
        from .field import field_char_analytic

        x = sample_field_pairings(box, z, law, kernel, spec.f, rng, spec.samples, rescaled=True)
        ex = field_char_analytic(box, z, law, kernel, spec.f, t, rescaled=True) if exact else limit * np.nan
    est, radius = ecf_estimate(x, t)
    return SweepPoint(z, t, est, ecf_stderr(x, t), radius, limit, np.asarray(ex))


def ecf_convergence_sweep(spec: ScalingSweepSpec, box: Box, law: ChargeLaw,
                          kernel=None, exact: bool = True) -> list[SweepPoint]:
    """Per-z empirical CFs of the rescaled pairing against the Gaussian limit.

    Each z draws from its own substream of ``spec.seed``.  With ``exact`` the
    finite-z analytic CF is computed as well.
    """
    return [sweep_point(spec, k, box, law, kernel, exact) for k in range(len(spec.z_list))]


def analytic_sweep(z_list: Sequence[float], box: Box, law: ChargeLaw, f: TestFunction,
                   t_grid, target: str = "noise", kernel=None) -> np.ndarray:
    """sup_t |CF_z(t) - CF_inf(t)| from the exact characteristic functions."""
    var = limit_variance(target, box, law, f, kernel)
    t = np.asarray(t_grid, dtype=np.float64)
    limit = np.exp(-0.5 * var * t * t)
    out = []
    for z in z_list:
        if target == "noise":
            cf = noise_char_analytic(box, z, law, f, t, tol=1e-10, charge_scale=1.0 / math.sqrt(z))
        else:
            from .field import field_char_analytic

            cf = field_char_analytic(box, z, law, kernel, f, t, rescaled=True)
        out.append(float(np.max(np.abs(cf - limit))))
    return np.array(out)


# ---------------------------------------------------------------------------
# block-spin identity
# ---------------------------------------------------------------------------

def _bumps(f: TestFunction) -> list[GaussianBump]:
    terms = f.terms()
    if not terms or not all(isinstance(t, GaussianBump) for t in terms):
        raise ScalingError("block-spin check is implemented for sums of Gaussian bumps")
    return terms


def _support_box(bumps, d: int, reach: float) -> Box:
    lo = [min(b.center[i] - 8.0 * b.width for b in bumps) - reach for i in range(d)]
    hi = [max(b.center[i] + 8.0 * b.width for b in bumps) + reach for i in range(d)]
    return Box(tuple(lo), tuple(hi))


def blockspin_exponents(z: float, params: KernelParams, f: TestFunction, t_grid,
                        law: ChargeLaw, pad: float = 10.0, tol: float = 1e-9):
    """Both sides of the identity as complex arrays over the t grid.

    Left: activity z, mass m, charges s/sqrt(z), test function f.
    Right: activity 1, mass m/alpha, charges s, test function f~ (bumps with
    centre alpha c, width alpha w, amplitude alpha^((d-2)/2-d) A), on the
    domain scaled by alpha.
    """
    if not z > 0:
        raise ScalingError("z must be positive")
    d, m = params.d, params.m
    alpha = z ** (1.0 / d)
    bumps = _bumps(f)
    t = np.atleast_1d(np.asarray(t_grid, dtype=np.float64))
    box = _support_box(bumps, d, pad / m)
    left = lk_exponent(lambda x: green_convolve(f, params, x), box, z, law, t,
                       charge_scale=1.0 / math.sqrt(z), tol=tol)
    f_tilde = FiniteSum(tuple(b.rescaled(alpha, d) for b in bumps))
    params_tilde = KernelParams(d, m / alpha)
    right = lk_exponent(lambda x: green_convolve(f_tilde, params_tilde, x), box.scaled(alpha),
                        1.0, law, t, tol=tol)
    return np.asarray(left), np.asarray(right)


def blockspin_identity_check(z: float, params: KernelParams, f: TestFunction, t_grid,
                             law: Optional[ChargeLaw] = None, **kw) -> float:
    """max_t |exponent_left - exponent_right|."""
    law = law or ChargeLaw.two_point_symmetric(1.0)
    left, right = blockspin_exponents(z, params, f, t_grid, law, **kw)
    return float(np.max(np.abs(left - right)))


# ---------------------------------------------------------------------------
# expansion coefficients
# ---------------------------------------------------------------------------

def _exponentials(spec) -> list[tuple[float, float]]:
    """v(phi) = sum_j c_j exp(i beta_j phi) as (c_j, beta_j)."""
    if isinstance(spec, Trigonometric):
        out = [(-sum(w for w, _ in spec.terms), 0.0)]
        for w, a in spec.terms:
            out += [(0.5 * w, a), (0.5 * w, -a)]
        return out
    if isinstance(spec, RenormalizedCosine):
        c = 1.0 / spec.normalizer
        return [(-c, 0.0), (0.5 * c, spec.alpha), (0.5 * c, -spec.alpha)]
    raise ScalingError("expansion coefficients need a trigonometric density")


@dataclass(frozen=True)
class ExpansionQuad:
    """Outer y-rule on the box; inner particle rule on the box padded by ``pad``/m."""

    outer_order: int = 6
    outer_panels: int = 2
    inner_order: int = 6
    inner_h: Optional[float] = None
    pad: float = 10.0

    def refined(self) -> "ExpansionQuad":
        h = None if self.inner_h is None else 0.5 * self.inner_h
        return ExpansionQuad(self.outer_order, 2 * self.outer_panels, self.inner_order, h, self.pad)


def _inner_rule(box: Box, params: KernelParams, eps: float, quad: ExpansionQuad,
                f: TestFunction):
    outer = box.padded(quad.pad / params.m)
    widths = [t.width for t in f.terms() if isinstance(t, GaussianBump)]
    h = quad.inner_h or min([1.0 / params.m, 2.0 * eps] + [2.0 * w for w in widths])
    panels = int(math.ceil(float(outer.widths.max()) / h))
    return tensor_rule(outer.lower, outer.upper, panels, quad.inner_order)


def perturbative_coefficient(n: int, t, f: TestFunction, eps: float, model: str,
                             spec, box: Box, params: KernelParams,
                             law: Optional[ChargeLaw] = None, z: float = 1.0,
                             quad: Optional[ExpansionQuad] = None):
    """A_n(t) = (1/n!) int_{box^n} E[exp(i t <phi,f>) v(phi_eps(y_1))...v(phi_eps(y_n))] dy.

    ``model="poisson"``: the rescaled field phi^z (charges s/sqrt(z), activity
    z, particles on the padded box), each term by the Levy-Khinchine exponent.
    ``model="gaussian"``: the free field with covariance E[S^2] (G*.)(G*.),
    each term by its closed-form Gaussian exponent.
    """
    if n not in (0, 1, 2):
        raise ScalingError("expansion coefficients are implemented for n <= 2")
    if not eps > 0:
        raise ScalingError("expansion coefficients need a mollified kernel (eps > 0)")
    if model not in ("poisson", "gaussian"):
        raise ScalingError(f"unknown model {model!r}")
    law = law or ChargeLaw.two_point_symmetric(1.0)
    quad = quad or ExpansionQuad()
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    coeffs = _exponentials(spec)
    y_nodes, y_w = tensor_rule(box.lower, box.upper, quad.outer_panels, quad.outer_order)
    table = mollified_table(params.d, params.m, eps)
    out = np.zeros(t_arr.shape, dtype=np.complex128)
    if model == "gaussian":
        out = _gaussian_coefficient(n, t_arr, f, eps, coeffs, y_nodes, y_w, params, law)
    else:
        out = _poisson_coefficient(n, t_arr, f, eps, coeffs, y_nodes, y_w, params, law, z,
                                   box, table, quad)
    out /= math.factorial(n)
    return complex(out[0]) if np.ndim(t) == 0 else out


def _poisson_coefficient(n, t, f, eps, coeffs, y_nodes, y_w, params, law, z, box, table, quad):
    x, xw = _inner_rule(box, params, eps, quad, f)
    gf = green_convolve(f, params, x) if f.terms() else np.zeros(x.shape[0])
    s = np.asarray(law.values) / math.sqrt(z)
    p = np.asarray(law.probs)

    def exponent(g):
        # z sum_s p_s int (exp(i s g) - 1)
        return z * ((np.exp(1j * g[:, None] * s[None, :]) - 1.0) @ p) @ xw

    def kernel_at(y):
        r = np.sqrt(np.sum((x - y) ** 2, axis=1))
        return table(r)

    out = np.zeros(t.shape, dtype=np.complex128)
    if n == 0:
        for k, tk in enumerate(t):
            out[k] = np.exp(exponent(tk * gf))
        return out
    ker = [kernel_at(y) for y in y_nodes]
    for tuple_idx in product(range(len(y_nodes)), repeat=n):
        wy = float(np.prod(y_w[list(tuple_idx)]))
        for choice in product(coeffs, repeat=n):
            c = math.prod(cj for cj, _ in choice)
            if c == 0:
                continue
            extra = sum(b * ker[i] for (_, b), i in zip(choice, tuple_idx))
            for k, tk in enumerate(t):
                out[k] += wy * c * np.exp(exponent(tk * gf + extra))
    return out


def _gaussian_coefficient(n, t, f, eps, coeffs, y_nodes, y_w, params, law):
    d = params.d
    var = law.second_moment
    qff = green_inner(params, f, f) if f.terms() else 0.0

    def cross(y):
        # int (G*f)(x) G_eps(x - y) dx
        total = 0.0
        for b in (f.terms() if f.terms() else []):
            if not isinstance(b, GaussianBump):
                raise ScalingError("the Gaussian model needs Gaussian-bump test functions")
            mass = b.amplitude * (2.0 * math.pi * b.width ** 2) ** (0.5 * d)
            total += mass * covariance_kernel(params, math.dist(y, b.center), math.sqrt(b.width ** 2 + eps ** 2))
        return total

    c0 = covariance_kernel(params, 0.0, math.sqrt(2.0) * eps)
    out = np.zeros(t.shape, dtype=np.complex128)
    if n == 0:
        return np.exp(-0.5 * var * t * t * qff).astype(np.complex128)
    kf = np.array([cross(y) for y in y_nodes])
    for tuple_idx in product(range(len(y_nodes)), repeat=n):
        idx = list(tuple_idx)
        wy = float(np.prod(y_w[idx]))
        pts = y_nodes[idx]
        cyy = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                cyy[i, j] = c0 if i == j else covariance_kernel(params, math.dist(pts[i], pts[j]),
                                                                 math.sqrt(2.0) * eps)
        for choice in product(coeffs, repeat=n):
            c = math.prod(cj for cj, _ in choice)
            beta = np.array([b for _, b in choice])
            quad_yy = float(beta @ cyy @ beta)
            lin = float(beta @ kf[idx])
            out += wy * c * np.exp(-0.5 * var * (t * t * qff + 2.0 * t * lin + quad_yy))
    return out


def first_order_mc(t, f: TestFunction, eps: float, spec, box: Box, params: KernelParams,
                   law: ChargeLaw, z: float, samples: int, rng: RngStream,
                   pad: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo A_1(t): per sample, one uniform y in the box estimates the y-integral.

    Returns (estimate, stderr) over the t grid.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    outer = box.padded(pad / params.m)
    table = mollified_table(params.d, params.m, eps)
    args = table.core_args()
    vals = np.empty((samples, t.size), dtype=np.complex128)
    scale = 1.0 / math.sqrt(z)
    for k in range(samples):
        cfg = sample_configuration(outer, z, law, rng)
        y = box.sample_uniform(rng, 1)
        q = np.ascontiguousarray(cfg.charges * scale)
        phi_y = float(core.kernel_field(y, cfg.positions, q, *args)[0])
        pair = float(np.dot(q, green_convolve(f, params, cfg.positions))) if f.terms() and cfg.n else 0.0
        vals[k] = np.exp(1j * t * pair) * box.volume * spec(phi_y)
    est = vals.mean(axis=0)
    se = np.sqrt((vals.real.var(axis=0) + vals.imag.var(axis=0)) / samples)
    return est, se


# ---------------------------------------------------------------------------
# triviality
# ---------------------------------------------------------------------------

@dataclass
class TrivialityRecord:
    z: float
    normalizer: float
    center_mean: float
    center_stderr: float
    box_mean: float
    box_var: float
    box_var_stderr: float
    box_average_cos: float
    samples: int

    @property
    def boundary_deviation(self) -> float:
        return self.center_mean - self.box_average_cos


def triviality_point(z: float, k: int, alpha: float, law: ChargeLaw, kernel, box: Box,
                     samples: int, seed: int = 0, pad: float = 6.0,
                     grid: int = 8) -> TrivialityRecord:
    """One row of :func:`triviality_curve`; Monte Carlo on substream k of ``seed``."""
    if not law.symmetric:
        raise ScalingError("triviality curve needs a symmetric law")
    n_z = renorm_normalizer(z, alpha, law, kernel)
    if samples == 0:
        return TrivialityRecord(z, n_z, *([math.nan] * 6), 0)
    if samples < 2:
        raise ScalingError("need at least 2 samples for the variance")
    params = _params(kernel)
    outer = box.padded(pad / params.m)
    args = default_table(params.d, params.m).core_args()
    axes = [box.lower[i] + (np.arange(grid) + 0.5) * box.widths[i] / grid for i in range(box.d)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    pts = np.ascontiguousarray(np.vstack([box.center[None, :], pts]))
    cell = box.volume / grid ** box.d
    rng = RngStream(seed).substream(k)
    centre = np.empty(samples)
    integral = np.empty(samples)
    for j in range(samples):
        cfg = sample_configuration(outer, z, law, rng)
        q = np.ascontiguousarray(cfg.charges / math.sqrt(z))
        phi = core.kernel_field(pts, cfg.positions, q, *args)
        c = np.cos(alpha * phi)
        centre[j] = c[0]
        integral[j] = cell * float(np.sum(c[1:] - 1.0))
    var = float(np.var(integral, ddof=1))
    # stderr of the sample variance from the fourth central moment
    dev = integral - integral.mean()
    var_se = math.sqrt(max(np.mean(dev ** 4) - var ** 2, 0.0) / samples)
    return TrivialityRecord(
        z, n_z, float(centre.mean()), float(centre.std(ddof=1) / math.sqrt(samples)),
        float(integral.mean()), var, var_se, 1.0 + float(integral.mean()) / box.volume, samples)


def triviality_curve(z_list: Sequence[float], alpha: float, law: ChargeLaw, kernel,
                     box: Box, samples: int, seed: int = 0, pad: float = 6.0,
                     grid: int = 8, mc_max_z: float = math.inf) -> list[TrivialityRecord]:
    """N(z) and Monte Carlo statistics of int_box (cos(alpha phi^z) - 1) dx.

    Particles live on the box padded by ``pad``/m; the box integral uses the
    midpoint rule on ``grid`` cells per axis.  Monte Carlo is skipped (NaN
    columns) for z above ``mc_max_z``.
    """
    if not law.symmetric:
        raise ScalingError("triviality curve needs a symmetric law")
    return [triviality_point(z, k, alpha, law, kernel, box, 0 if z > mc_max_z else samples,
                             seed, pad, grid)
            for k, z in enumerate(z_list)]
