"""Convoluted Poisson noise: the static field phi = G * eta of a charge configuration.

Pairings <phi, f> are computed as <eta, G*f> (the kernel is radial, hence
symmetric), which never touches the singularities of the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ._backend import core
from .kernel import (KernelParams, KernelTable, covariance_kernel, default_table,
                     green_evaluate, mollified_table)
from .noise import (Box, BoxIndicator, ChargeConfiguration, ChargeLaw, GaussianBump,
                    TestFunction, lk_exponent, sample_pairings)
from .quadrature import axis_rule, integrate_box, tensor_rule
from .stats import RngStream

DELTA_POS = 1e-12


class SingularityError(ArithmeticError):
    """Field requested within ``DELTA_POS`` of a particle."""


@dataclass(frozen=True, eq=False)
class FieldContext:
    kernel: Union[KernelParams, KernelTable]
    config: ChargeConfiguration
    rescale_z: Optional[float] = None

    def __post_init__(self):
        if self.rescale_z is not None and not self.rescale_z > 0:
            raise ValueError("rescale parameter z must be positive")

    @property
    def params(self) -> KernelParams:
        return self.kernel if isinstance(self.kernel, KernelParams) else self.kernel.params

    @property
    def charges(self) -> np.ndarray:
        q = self.config.charges
        return q if self.rescale_z is None else q / math.sqrt(self.rescale_z)


def field_at(ctx: FieldContext, x) -> float:
    """phi(x) = sum_j s'_j G(|x - y_j|)."""
    x = np.asarray(x, dtype=np.float64)
    if ctx.config.n == 0:
        return 0.0
    r = np.sqrt(np.sum((ctx.config.positions - x) ** 2, axis=1))
    if r.min() <= DELTA_POS:
        raise SingularityError(f"point {x} lies within {DELTA_POS:g} of a particle")
    if isinstance(ctx.kernel, KernelParams):
        g = green_evaluate(ctx.kernel, r)
    else:
        g = ctx.kernel(r)
    return float(np.dot(ctx.charges, g))


def field_on_points(ctx: FieldContext, points) -> np.ndarray:
    """Vectorised field through the kernel table; distances are clamped at 1e-12."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    table = ctx.kernel if isinstance(ctx.kernel, KernelTable) else default_table(ctx.params.d, ctx.params.m)
    return core.kernel_field(pts, ctx.config.positions, np.ascontiguousarray(ctx.charges),
                             *table.core_args())


def cell_centers(box: Box, shape) -> np.ndarray:
    axes = [box.lower[i] + (np.arange(n) + 0.5) * (box.upper[i] - box.lower[i]) / n
            for i, n in enumerate(shape)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def field_on_grid(ctx: FieldContext, box: Box, shape) -> np.ndarray:
    """Field at cell centres of a regular grid, row-major with shape ``shape``."""
    return field_on_points(ctx, cell_centers(box, shape)).reshape(tuple(shape))


def dump_grid(fh, box: Box, shape, values) -> None:
    fh.write(f"# d={box.d} box={box.describe()} shape={'x'.join(str(n) for n in shape)}\n")
    for v in np.asarray(values).ravel():
        fh.write(f"{v:.17g}\n")


def read_grid(fh):
    header = fh.readline()
    meta = dict(tok.split("=", 1) for tok in header[1:].split())
    lo, hi = zip(*(tuple(float(v) for v in part.split(":")) for part in meta["box"].split(";")))
    shape = tuple(int(n) for n in meta["shape"].split("x"))
    values = np.array([float(fh.readline()) for _ in range(math.prod(shape))]).reshape(shape)
    return Box(lo, hi), shape, values


# ---------------------------------------------------------------------------
# G * f
# ---------------------------------------------------------------------------

def _graded_axis(lo, hi, focus, levels=14, ratio=0.2, order=6):
    """GL nodes on [lo, hi] with panels shrinking geometrically toward ``focus``."""
    width = hi - lo
    if width <= 0:
        return np.empty(0), np.empty(0)
    # a focus within rounding of an edge would create a degenerate panel
    snap = 1e-9 * width
    if abs(focus - lo) < snap:
        focus = lo
    elif abs(hi - focus) < snap:
        focus = hi
    pts = {lo, hi}
    for k in range(1, levels + 1):
        off = width * ratio ** k
        for p in (focus - off, focus + off):
            if lo < p < hi:
                pts.add(p)
    if lo < focus < hi:
        pts.add(focus)
    edges = sorted(pts)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = axis_rule(a, b, 1, order)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def green_box_integral(params: KernelParams, box: Box, y, levels: int = 14) -> float:
    """int_box G(|x - y|) dx with tensor meshes graded toward y."""
    y = np.asarray(y, dtype=np.float64)
    rules = []
    for i in range(box.d):
        focus = min(max(y[i], box.lower[i]), box.upper[i])
        rules.append(_graded_axis(box.lower[i], box.upper[i], focus, levels=levels))
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    r = np.sqrt(np.sum((pts - y) ** 2, axis=1))
    return float(np.dot(wts, green_evaluate(params, np.maximum(r, 1e-300))))


def green_convolve(f: TestFunction, params: KernelParams, points, eps: float = 0.0) -> np.ndarray:
    """(G_eps * f)(y) at each row of ``points`` (eps = 0: unmollified G)."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    out = np.zeros(pts.shape[0])
    for term in f.terms():
        if isinstance(term, GaussianBump):
            w = math.sqrt(term.width ** 2 + eps ** 2)
            table = mollified_table(params.d, params.m, w)
            r2 = np.zeros(pts.shape[0])
            for i, c in enumerate(term.center):
                r2 += (pts[:, i] - c) ** 2
            scale = term.amplitude * (2.0 * math.pi * term.width ** 2) ** (0.5 * params.d)
            out += scale * table(np.sqrt(r2))
        elif isinstance(term, BoxIndicator):
            if eps > 0:
                raise NotImplementedError("mollified convolution of box indicators")
            out += term.amplitude * np.array([green_box_integral(params, term.box, y) for y in pts])
        else:
            raise TypeError(f"unsupported test function term {term!r}")
    return out


def pair_field(ctx: FieldContext, f: TestFunction) -> float:
    """<phi, f> = sum_j s'_j (G*f)(y_j)."""
    if ctx.config.n == 0:
        return 0.0
    return float(np.dot(ctx.charges, green_convolve(f, ctx.params, ctx.config.positions)))


def pair_field_riemann(ctx: FieldContext, f: TestFunction, domain: Box, h: float,
                       near_cells: float = 3.0) -> float:
    """Grid route: sum over cells of f(centre) times the cell average of phi.

    Far from particles the cell average is the midpoint value of phi; for the
    few cells within ``near_cells`` spacings of a particle the singular kernel
    is averaged over the cell by graded quadrature instead.
    """
    shape = [max(1, int(round((b - a) / h))) for a, b in zip(domain.lower, domain.upper)]
    steps = np.array([(b - a) / n for a, b, n in zip(domain.lower, domain.upper, shape)])
    pts = cell_centers(domain, shape)
    cell = float(np.prod(steps))
    params, q, pos = ctx.params, ctx.charges, ctx.config.positions
    fv = f(pts)
    keep = np.abs(fv) > 0
    pts, fv = pts[keep], fv[keep]
    total = 0.0
    chunk = max(1, (1 << 16) // max(1, pos.shape[0]))
    reach = near_cells * float(steps.max())
    sub_x, sub_w = tensor_rule([-0.5] * domain.d, [0.5] * domain.d, 1, 6)
    for a in range(0, pts.shape[0], chunk):
        p = pts[a:a + chunk]
        diff = p[:, None, :] - pos[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        g = green_evaluate(params, np.maximum(r, 1e-300))
        ii, jj = np.nonzero(r < reach)
        if ii.size:
            # smooth near cells: order-6 tensor rule inside the cell
            sub = (sub_x[None, :, :] * steps + p[ii][:, None, :]) - pos[jj][:, None, :]
            rr = np.sqrt(np.sum(sub * sub, axis=2))
            g[ii, jj] = green_evaluate(params, np.maximum(rr, 1e-300)) @ sub_w
            for i, j in zip(ii, jj):
                if np.all(np.abs(pos[j] - p[i]) <= 0.5 * steps):
                    cbox = Box(tuple(p[i] - 0.5 * steps), tuple(p[i] + 0.5 * steps))
                    g[i, j] = green_box_integral(params, cbox, pos[j], levels=10) / cell
        total += float(np.dot(g @ q, fv[a:a + chunk]))
    return total * cell


# ---------------------------------------------------------------------------
# analytic characteristic functional and covariance
# ---------------------------------------------------------------------------

def _check_params(kernel) -> KernelParams:
    return kernel if isinstance(kernel, KernelParams) else kernel.params


def field_char_exponent(box: Box, z: float, law: ChargeLaw, kernel, f: TestFunction, t,
                        rescaled: bool = False, tol: float = 1e-9) -> np.ndarray:
    """Levy-Khinchine exponent of <phi, f> for particles distributed in ``box``."""
    params = _check_params(kernel)
    scale = 1.0 / math.sqrt(z) if rescaled else 1.0

    def weight(x):
        return green_convolve(f, params, x)

    return lk_exponent(weight, box, z, law, t, scale, tol)


def field_char_analytic(box: Box, z: float, law: ChargeLaw, kernel, f: TestFunction, t,
                        rescaled: bool = False, tol: float = 1e-9):
    """E exp(i t <phi, f>) with particles in ``box`` (pad the box for the full-space field)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = np.ones(t_arr.shape, dtype=np.complex128)
    nz = t_arr != 0
    if np.any(nz) and f.terms():
        out[nz] = np.exp(field_char_exponent(box, z, law, kernel, f, t_arr[nz], rescaled, tol))
    return complex(out[0]) if np.ndim(t) == 0 else out


def green_inner(params: KernelParams, f: TestFunction, h: TestFunction,
                box: Optional[Box] = None, tol: float = 1e-10) -> float:
    """int (G*f)(x) (G*h)(x) dx over ``box``, or over all of R^d when ``box`` is None."""
    if box is None:
        total = 0.0
        for a in f.terms():
            for b in h.terms():
                if not (isinstance(a, GaussianBump) and isinstance(b, GaussianBump)):
                    raise NotImplementedError("full-space covariance needs Gaussian bumps")
                eps = math.sqrt(a.width ** 2 + b.width ** 2)
                sep = math.dist(a.center, b.center)
                mass = (a.amplitude * (2 * math.pi * a.width ** 2) ** (0.5 * params.d)
                        * b.amplitude * (2 * math.pi * b.width ** 2) ** (0.5 * params.d))
                total += mass * covariance_kernel(params, sep, eps)
        return total

    def integrand(x):
        return green_convolve(f, params, x) * green_convolve(h, params, x)

    breaks = [tuple(set(f.breakpoints(i)) | set(h.breakpoints(i))) for i in range(box.d)]
    return float(integrate_box(integrand, box.lower, box.upper, breaks=breaks, tol=tol))


def free_covariance(kernel, f: TestFunction, h: TestFunction, z: float, law: ChargeLaw,
                    box: Optional[Box] = None) -> float:
    """Cov(<phi_0, f>, <phi_0, h>) = z E[S^2] int (G*f)(G*h)."""
    return z * law.second_moment * green_inner(_check_params(kernel), f, h, box)


def sample_field_pairings(box: Box, z: float, law: ChargeLaw, kernel, f: TestFunction,
                          rng: RngStream, n_samples: int, rescaled: bool = False) -> np.ndarray:
    """Monte Carlo draws of <phi, f> with particles in ``box``."""
    params = _check_params(kernel)
    scale = 1.0 / math.sqrt(z) if rescaled else 1.0
    return sample_pairings(box, z, law, lambda x: green_convolve(f, params, x), rng,
                           n_samples, charge_scale=scale)
