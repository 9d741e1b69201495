"""Green's function of ``(-Laplace + m^2)^(1/2)`` in ``d`` dimensions.

The kernel is radial,

    G(r) = 2^((1-d)/2) pi^(-(d+1)/2) m^((d-1)/2) r^(-(d-1)/2) K_{(d-1)/2}(m r),

with an ``r^(1-d)`` singularity at the origin and ``exp(-m r)`` decay.
Besides the closed form this module provides

* two independent quadrature routes used as oracles (Riesz-subtracted radial
  Hankel integral, and the heat-kernel subordination integral),
* the Gaussian-mollified kernel ``G_eps`` (Fourier multiplier
  ``(k^2+m^2)^(-1/2) exp(-eps^2 k^2 / 2)``),
* the mollified free covariance ``(-Laplace + m^2)^(-1)``,
* :class:`KernelTable`, a log-spaced cubic table used by the inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from ._backend import core


class KernelError(ValueError):
    """Invalid kernel parameters or arguments."""


@dataclass(frozen=True)
class KernelParams:
    d: int
    m: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise KernelError(f"d must be an integer >= 2, got {self.d!r}")
        if not (self.m > 0 and math.isfinite(self.m)):
            raise KernelError(f"m must be positive and finite, got {self.m!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "m", float(self.m))

    @property
    def order(self) -> float:
        """Bessel order ``(d-1)/2``."""
        return 0.5 * (self.d - 1)


@dataclass(frozen=True)
class MollifierParams:
    epsilon: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise KernelError(f"epsilon must be positive, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", float(self.epsilon))


def near_origin_coefficient(d: int) -> float:
    """C_d with G(r) ~ C_d r^(1-d) as r -> 0."""
    return math.gamma(0.5 * (d - 1)) / (2.0 * math.pi ** (0.5 * (d + 1)))


def unit_sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d)


def green_evaluate(params: KernelParams, r):
    """Closed-form G(r); ``r`` may be a scalar or an array of positive radii."""
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(~(r_arr > 0)):
        raise KernelError("green_evaluate requires r > 0")
    nu = params.order
    m = params.m
    x = m * r_arr
    pref = 2.0 ** (-nu) * math.pi ** (-0.5 * (params.d + 1)) * m ** nu
    out = pref * r_arr ** (-nu) * special.kve(nu, x) * np.exp(-x)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# quadrature routes
# ---------------------------------------------------------------------------

_GL32 = np.polynomial.legendre.leggauss(32)
_GL16 = np.polynomial.legendre.leggauss(16)


def _xj(nu: float, x):
    """x^(-nu) J_nu(x), regular at 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x < 1e-4
    xs = x[small]
    out[small] = (1.0 - xs * xs / (4.0 * (nu + 1.0))) / (2.0 ** nu * special.gamma(nu + 1.0))
    xl = x[~small]
    out[~small] = special.jv(nu, xl) / xl ** nu
    return out


def green_fourier_quadrature(params: KernelParams, r: float, half_periods: int = 60) -> float:
    """G(r) by radial Fourier inversion of (k^2+m^2)^(-1/2).

    The massless part 1/k is inverted exactly (Riesz potential); the remainder
    decays like k^-3 and is integrated panel by panel over half-periods of the
    Bessel oscillation, with repeated averaging of the partial sums.
    """
    if not r > 0:
        raise KernelError("green_fourier_quadrature requires r > 0")
    d, m = params.d, params.m
    nu = 0.5 * d - 1.0
    x, w = _GL32

    def remainder(k):
        s = np.sqrt(k * k + m * m)
        return -m * m / (k * s * (s + k))

    def panels(edges):
        a = edges[:-1, None]
        b = edges[1:, None]
        k = 0.5 * (b - a) * x + 0.5 * (b + a)
        vals = k ** (d - 1) * _xj(nu, k * r) * remainder(k)
        return 0.5 * (b - a)[:, 0] * (vals @ w)

    k0 = max(50.0 * m, 50.0 / r)
    head = np.concatenate([[0.0], np.geomspace(1e-6 * min(m, 1.0 / r), k0, 400)])
    total = float(np.sum(panels(head)))
    step = math.pi / r
    tail_edges = k0 + step * np.arange(half_periods + 1)
    partial = total + np.concatenate([[0.0], np.cumsum(panels(tail_edges))])
    for _ in range(half_periods // 3):
        partial = 0.5 * (partial[1:] + partial[:-1])
    integral = (2.0 * math.pi) ** (-0.5 * d) * partial[-1]
    return near_origin_coefficient(d) * r ** (1 - d) + integral


def _subordinated(r, d: int, m: float, eps: float, power: float, h: float = 0.05):
    """Inverse Fourier transform of (k^2+m^2)^(-power) exp(-eps^2 k^2/2) at radii r.

    Uses (k^2+m^2)^(-p) = Gamma(p)^-1 int t^(p-1) exp(-t(k^2+m^2)) dt, the Gaussian
    heat kernel in x, and the trapezoid rule in v = log(t)/2 (exponentially
    convergent for this analytic integrand).
    """
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    s2 = 0.5 * eps * eps
    if s2 == 0.0 and np.any(r <= 0):
        raise KernelError("unmollified kernel requires r > 0")
    rmax = float(r.max()) if r.size else 0.0
    t_hi = (rmax * m + 60.0) / (m * m)
    if s2 > 0.0:
        t_lo = 1e-36 ** (1.0 / power) * s2
        # below ~1e-100 the heat kernel is flat in r; ignore such radii here
        rpos = r[r > 1e-100]
        if rpos.size:
            t_lo = min(t_lo, float(rpos.min()) ** 2 / 240.0)
    else:
        t_lo = float(r.min()) ** 2 / 240.0
    v = np.arange(0.5 * math.log(t_lo), 0.5 * math.log(t_hi) + h, h)
    t = np.exp(2.0 * v)
    ts = t + s2
    base = (2.0 / math.gamma(power)) * np.exp(2.0 * power * v - m * m * t) * (4.0 * math.pi * ts) ** (-0.5 * d)
    out = np.empty_like(r)
    chunk = max(1, 400000 // v.size)
    for a in range(0, r.size, chunk):
        rr = r[a:a + chunk, None]
        out[a:a + chunk] = h * np.sum(base * np.exp(-rr * rr / (4.0 * ts)), axis=1)
    return out


def green_subordination(params: KernelParams, r):
    """Unmollified G(r) via the subordination integral (closed-form-free oracle)."""
    out = _subordinated(r, params.d, params.m, 0.0, 0.5)
    return float(out[0]) if np.ndim(r) == 0 else out


def green_mollified(params: KernelParams, moll: MollifierParams, r):
    """G_eps(r) for the Gaussian mollifier of width eps; finite at r = 0."""
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr < 0):
        raise KernelError("green_mollified requires r >= 0")
    out = _subordinated(r_arr, params.d, params.m, moll.epsilon, 0.5)
    return float(out[0]) if r_arr.ndim == 0 else out


def green_mollified_hankel(params: KernelParams, moll: MollifierParams, r: float) -> float:
    """G_eps(r) by direct radial Hankel quadrature of the damped multiplier.

    Absolute accuracy ~1e-15, so only meaningful where G_eps is not tiny.
    """
    d, m, eps = params.d, params.m, moll.epsilon
    nu = 0.5 * d - 1.0
    k_max = math.sqrt(90.0) / eps
    width = min(0.5 * m, 0.25 / eps, math.pi / r if r > 0 else math.inf)
    n_pan = max(8, int(math.ceil(k_max / width)))
    edges = np.linspace(0.0, k_max, n_pan + 1)
    x, w = _GL16
    a = edges[:-1, None]
    b = edges[1:, None]
    k = 0.5 * (b - a) * x + 0.5 * (b + a)
    mult = np.exp(-0.5 * eps * eps * k * k) / np.sqrt(k * k + m * m)
    vals = k ** (d - 1) * _xj(nu, k * r) * mult
    integral = float(np.sum(0.5 * (b - a)[:, 0] * (vals @ w)))
    return (2.0 * math.pi) ** (-0.5 * d) * integral


def covariance_kernel(params: KernelParams, r, eps: float = 0.0):
    """Free covariance (-Laplace+m^2)^-1 at radius r, optionally Gaussian-smoothed."""
    r_arr = np.asarray(r, dtype=np.float64)
    out = _subordinated(r_arr, params.d, params.m, eps, 1.0)
    return float(out[0]) if r_arr.ndim == 0 else out


def radial_integral(func, d: int, r_max: float, breakpoints=(), n_panels: int = 200):
    """int_{|x|<r_max} func(|x|) dx for a radial function (composite Gauss-Legendre in log r)."""
    x, w = _GL16
    pts = sorted({float(b) for b in breakpoints if 0 < b < r_max})
    lo = 1e-14 * r_max
    edges = np.unique(np.concatenate([np.geomspace(lo, r_max, n_panels + 1), pts]))
    u = np.log(edges)
    a = u[:-1, None]
    b = u[1:, None]
    uu = 0.5 * (b - a) * x + 0.5 * (b + a)
    rr = np.exp(uu)
    vals = np.asarray(func(rr.ravel())).reshape(rr.shape) * rr ** d
    return unit_sphere_area(d) * float(np.sum(0.5 * (b - a)[:, 0] * (vals @ w)))


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

_LOG, _LOG1P = 0, 1


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Cubic spline of log G on a uniform grid in log r (or log(1 + r/eps)).

    Below ``r_min`` the table continues with the ``r^(1-d)`` asymptote, above
    ``r_max`` with ``r^(-d/2) exp(-m r)``, both matched to the end values.
    """

    params: KernelParams
    radii: np.ndarray
    values: np.ndarray
    epsilon: float = 0.0
    mode: int = field(init=False)
    u0: float = field(init=False)
    du: float = field(init=False)
    scale: float = field(init=False)
    coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        radii = np.ascontiguousarray(self.radii, dtype=np.float64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if radii.ndim != 1 or radii.shape != values.shape or radii.size < 4:
            raise KernelError("table needs matching 1-d radii/values with >= 4 nodes")
        if np.any(values <= 0) or np.any(np.diff(values) >= 0):
            raise KernelError("table values must be positive and strictly decreasing")
        if self.epsilon > 0:
            mode, scale = _LOG1P, float(self.epsilon)
            u = np.log1p(radii / scale)
        else:
            mode, scale = _LOG, 1.0
            u = np.log(radii)
        du = (u[-1] - u[0]) / (u.size - 1)
        if not np.allclose(np.diff(u), du, rtol=1e-9, atol=1e-12):
            raise KernelError("table radii are not uniformly spaced in the table coordinate")
        spline = CubicSpline(u[0] + du * np.arange(u.size), np.log(values))
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "u0", float(u[0]))
        object.__setattr__(self, "du", float(du))
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "coef", np.ascontiguousarray(spline.c.T))

    @property
    def r_min(self) -> float:
        return float(self.radii[0])

    @property
    def r_max(self) -> float:
        return float(self.radii[-1])

    def core_args(self) -> tuple:
        d = self.params.d
        return (self.mode, self.u0, self.du, self.scale, self.coef, self.radii, self.values,
                self.r_min, self.r_max, float(d - 1), 0.5 * d, self.params.m)

    def __call__(self, r):
        r_arr = np.ascontiguousarray(np.atleast_1d(r), dtype=np.float64)
        out = core.table_eval(r_arr.ravel(), *self.core_args())
        out = np.asarray(out).reshape(r_arr.shape)
        return float(out[0]) if np.ndim(r) == 0 else out

    def derivative(self, r) -> np.ndarray:
        """dG/dr, consistent with the spline and the two tail continuations."""
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        g = np.asarray(self(r))
        dlog = np.empty_like(r)
        hi = r > self.r_max
        lo = (r < self.r_min) & (self.mode == _LOG)
        mid = ~(hi | lo)
        dlog[hi] = -0.5 * self.params.d / r[hi] - self.params.m
        dlog[lo] = -(self.params.d - 1) / r[lo]
        rm = r[mid]
        if self.mode == _LOG:
            u, dudr = np.log(rm), 1.0 / rm
        else:
            u, dudr = np.log1p(rm / self.scale), 1.0 / (self.scale + rm)
        i = np.clip(np.floor((u - self.u0) / self.du).astype(np.int64), 0, self.radii.size - 2)
        x = u - (self.u0 + i * self.du)
        c = self.coef[i]
        dlog[mid] = ((3.0 * c[:, 0] * x + 2.0 * c[:, 1]) * x + c[:, 2]) * dudr
        return g * dlog

    def inverse(self, g) -> np.ndarray:
        """Radius at which the kernel equals ``g`` (monotone inversion; 0 above G(0))."""
        g = np.atleast_1d(np.asarray(g, dtype=np.float64))
        logv = np.log(self.values[::-1])
        out = np.exp(np.interp(np.log(g), logv, np.log(np.maximum(self.radii[::-1], 1e-300))))
        above = g > self.values[0]
        if self.mode == _LOG:
            out[above] = self.r_min * (self.values[0] / g[above]) ** (1.0 / (self.params.d - 1))
        else:
            out[above] = 0.0
        below = g < self.values[-1]
        out[below] = self.r_max + np.log(self.values[-1] / g[below]) / self.params.m
        # Newton polish on log G
        ok = out > 0
        for _ in range(4):
            r = out[ok]
            gr = self(r)
            out[ok] = np.maximum(r - (np.log(gr) - np.log(g[ok])) * gr / self.derivative(r), 0.5 * r)
        return out

    def midpoint_error(self) -> float:
        """Max relative error at the midpoints between nodes vs direct evaluation."""
        u = self.u0 + self.du * (np.arange(self.radii.size - 1) + 0.5)
        r = np.exp(u) if self.mode == _LOG else self.scale * np.expm1(u)
        exact = _direct(self.params, self.epsilon, r)
        return float(np.max(np.abs(self(r) / exact - 1.0)))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# d={self.params.d} m={self.params.m!r} n_points={self.radii.size}"
                     f" epsilon={self.epsilon!r}\n")
            for r, v in zip(self.radii, self.values):
                fh.write(f"{r:.17g} {v:.17g}\n")

    @classmethod
    def load(cls, path) -> "KernelTable":
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise KernelError("missing kernel table header")
            meta = dict(tok.split("=", 1) for tok in header[1:].split())
            data = np.loadtxt(fh, ndmin=2)
        if data.shape[0] != int(meta["n_points"]):
            raise KernelError("kernel table row count does not match header")
        params = KernelParams(int(meta["d"]), float(meta["m"]))
        return cls(params, data[:, 0], data[:, 1], float(meta.get("epsilon", 0.0)))


def _direct(params: KernelParams, eps: float, r):
    if eps > 0:
        return green_mollified(params, MollifierParams(eps), r)
    return green_evaluate(params, r)


def build_table(params: KernelParams, r_min: float, r_max: float, n_points: int,
                tol: float = 1e-6) -> KernelTable:
    """Tabulate G on ``n_points`` log-spaced radii, densifying until midpoints meet ``tol``."""
    if not (0 < r_min < r_max) or not math.isfinite(r_max):
        raise KernelError(f"invalid table range [{r_min}, {r_max}]")
    if n_points < 16:
        raise KernelError("n_points must be >= 16")
    n = int(n_points)
    u0, u1 = math.log(r_min), math.log(r_max)
    while True:
        radii = np.exp(u0 + (u1 - u0) / (n - 1) * np.arange(n))
        table = KernelTable(params, radii, green_evaluate(params, radii))
        if table.midpoint_error() < tol or n > 1 << 16:
            return table
        n = 2 * n - 1


def build_mollified_table(params: KernelParams, moll: MollifierParams,
                          r_max: Optional[float] = None, n_points: int = 257,
                          tol: float = 1e-8) -> KernelTable:
    """Tabulate G_eps on a grid uniform in log(1 + r/eps), starting at r = 0."""
    eps = moll.epsilon
    if r_max is None:
        r_max = 40.0 / params.m + 10.0 * eps
    n = max(int(n_points), 16)
    u1 = math.log1p(r_max / eps)
    while True:
        radii = eps * np.expm1(u1 / (n - 1) * np.arange(n))
        table = KernelTable(params, radii, green_mollified(params, moll, radii), epsilon=eps)
        if table.midpoint_error() < tol or n > 1 << 16:
            return table
        n = 2 * n - 1


@lru_cache(maxsize=32)
def default_table(d: int, m: float) -> KernelTable:
    """Shared table for field evaluation: r in [1e-6/m, 60/m]."""
    return build_table(KernelParams(d, m), 1e-6 / m, 60.0 / m, 512)


@lru_cache(maxsize=32)
def mollified_table(d: int, m: float, eps: float) -> KernelTable:
    return build_mollified_table(KernelParams(d, m), MollifierParams(eps))


@dataclass(frozen=True)
class MollifiedKernel:
    """G_eps as a field kernel (smooth, finite at the origin)."""

    params: KernelParams
    moll: MollifierParams

    @property
    def table(self) -> KernelTable:
        return mollified_table(self.params.d, self.params.m, self.moll.epsilon)

    def __call__(self, r):
        return self.table(r)
