"""Energy densities v and the interaction energy U(eta) = int v((G*eta)(x)) dx.

U is integrated over the particle box padded by a few decay lengths.  The base
grid is refined adaptively where the integrand cannot be resolved by the
leaf rule: next to singular kernels, where the phase of a trigonometric
density changes quickly, and on cells that may straddle the jump of a
discontinuous density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from ._backend import core
from .kernel import (KernelParams, KernelTable, MollifiedKernel, default_table,
                     unit_sphere_area)
from .noise import Box, ChargeConfiguration, ChargeLaw
from .quadrature import QuadratureError, tensor_rule


class PotentialError(ValueError):
    """Invalid potential specification or move."""


# ---------------------------------------------------------------------------
# energy densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trigonometric:
    """v(phi) = sum_k w_k (cos(alpha_k phi) - 1)."""

    terms: tuple

    def __post_init__(self):
        terms = tuple((float(w), float(a)) for w, a in self.terms)
        if not terms:
            raise PotentialError("trigonometric potential needs at least one term")
        if any(a == 0 for _, a in terms):
            raise PotentialError("trigonometric frequencies must be nonzero")
        object.__setattr__(self, "terms", terms)

    def __call__(self, phi):
        phi = np.asarray(phi, dtype=np.float64)
        return sum(w * (np.cos(a * phi) - 1.0) for w, a in self.terms)

    @property
    def lipschitz(self) -> float:
        return sum(abs(w * a) for w, a in self.terms)

    @property
    def bound(self) -> float:
        return 2.0 * sum(abs(w) for w, _ in self.terms)


@dataclass(frozen=True)
class RenormalizedCosine:
    """cos(alpha phi) / N, stored with its constant removed: (cos(alpha phi) - 1) / N."""

    alpha: float
    normalizer: float

    def __post_init__(self):
        if not self.normalizer > 0:
            raise PotentialError("normalizer must be positive")

    def __call__(self, phi):
        return (np.cos(self.alpha * np.asarray(phi, dtype=np.float64)) - 1.0) / self.normalizer

    @property
    def lipschitz(self) -> float:
        return abs(self.alpha) / self.normalizer

    @property
    def bound(self) -> float:
        return 2.0 / self.normalizer


@dataclass(frozen=True)
class HardWall:
    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise PotentialError("hard-wall threshold must be positive")

    def __call__(self, phi):
        return np.where(np.asarray(phi) >= self.threshold, np.inf, 0.0)


@dataclass(frozen=True)
class Trigger:
    level: float

    def __post_init__(self):
        if not self.level > 0:
            raise PotentialError("trigger level must be positive")

    def __call__(self, phi):
        return np.where(np.asarray(phi) >= self.level, 1.0, 0.0)

    bound = 1.0


@dataclass(frozen=True)
class Quadratic:
    def __call__(self, phi):
        phi = np.asarray(phi, dtype=np.float64)
        return phi * phi


PotentialSpec = Union[Trigonometric, RenormalizedCosine, HardWall, Trigger, Quadratic]


def potential_value(spec: PotentialSpec, phi):
    """v(phi); +inf for a hard wall at or above its threshold."""
    out = spec(phi)
    return float(out) if np.ndim(out) == 0 else out


def _jump(spec) -> Optional[float]:
    if isinstance(spec, HardWall):
        return spec.threshold
    if isinstance(spec, Trigger):
        return spec.level
    return None


# ---------------------------------------------------------------------------
# kernels and the integration domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorKernel:
    """chi of the open ball of radius R."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise PotentialError("indicator radius must be positive")

    def __call__(self, r):
        return np.where(np.asarray(r) < self.radius, 1.0, 0.0)


Kernel = Union[KernelParams, KernelTable, MollifiedKernel, IndicatorKernel]


def _table(kernel) -> Optional[KernelTable]:
    if isinstance(kernel, KernelParams):
        return default_table(kernel.d, kernel.m)
    if isinstance(kernel, MollifiedKernel):
        return kernel.table
    if isinstance(kernel, KernelTable):
        return kernel
    return None


def _singular(kernel) -> bool:
    t = _table(kernel)
    return t is not None and t.epsilon == 0.0


def _check_kernel_spec(kernel, spec) -> None:
    if isinstance(spec, Quadratic) and _singular(kernel):
        raise PotentialError("the quadratic density needs a mollified or indicator kernel")


@dataclass(frozen=True)
class InteractionDomain:
    """Padded integration region and quadrature controls.

    ``pad`` is in decay lengths 1/m (indicator kernels are padded by R).  ``h`` is the
    base cell size; by default min(0.1/m, eps/2) (indicator: R/10).  Leaves use
    a Gauss-Legendre tensor rule of ``order`` points per axis.  Cells are split
    near singular kernels (within ``near`` cell sizes of a particle), where a
    Lipschitz density varies by more than ``phase_tol`` across the cell while
    the cell can still hold more than ``cell_tol`` of the integral, and where
    a discontinuous density may jump.
    """

    pad: float = 10.0
    h: Optional[float] = None
    order: int = 4
    refine_levels: int = 24
    near: float = 3.0
    phase_tol: float = 1.0
    cell_tol: float = 1e-8
    min_cell: float = 0.0

    def __post_init__(self):
        if self.pad < 0 or (self.h is not None and not self.h > 0):
            raise PotentialError("pad must be >= 0 and h > 0")
        if self.order < 1 or self.refine_levels < 0:
            raise PotentialError("order must be >= 1 and refine_levels >= 0")

    def length_scale(self, kernel) -> float:
        if isinstance(kernel, IndicatorKernel):
            return kernel.radius
        t = _table(kernel)
        return 1.0 / t.params.m

    def spacing(self, kernel) -> float:
        if self.h is not None:
            return self.h
        if isinstance(kernel, IndicatorKernel):
            return 0.1 * kernel.radius
        t = _table(kernel)
        h = 0.1 / t.params.m
        if t.epsilon > 0:
            h = min(h, 0.5 * t.epsilon)
        return h

    def integration_box(self, box: Box, kernel) -> Box:
        if isinstance(kernel, IndicatorKernel):
            # the field vanishes beyond R from the box
            return box.padded(kernel.radius)
        return box.padded(self.pad * self.length_scale(kernel))


# ---------------------------------------------------------------------------
# field evaluation and adaptive leaves
# ---------------------------------------------------------------------------

def _canonical(config: ChargeConfiguration):
    """Positions/charges in a fixed order so sums do not depend on labelling."""
    pos, q = config.positions, config.charges
    if pos.shape[0] < 2:
        return np.ascontiguousarray(pos), np.ascontiguousarray(q)
    keys = [q] + [pos[:, i] for i in range(pos.shape[1] - 1, -1, -1)]
    idx = np.lexsort(keys)
    return np.ascontiguousarray(pos[idx]), np.ascontiguousarray(q[idx])


def kernel_field(kernel, points, pos, q) -> np.ndarray:
    """(G*eta)(x) at rows of ``points`` for any supported kernel."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pos.shape[0] == 0:
        return np.zeros(pts.shape[0])
    if isinstance(kernel, IndicatorKernel):
        return _ball_sum(pts, pos, q, kernel.radius)
    pos, q = np.ascontiguousarray(pos, dtype=np.float64), np.ascontiguousarray(q, dtype=np.float64)
    return core.kernel_field(pts, pos, q, *_table(kernel).core_args())


def _ball_sum(points, pos, q, radius):
    if radius <= 0:
        return np.zeros(points.shape[0])
    c = np.ascontiguousarray
    return core.indicator_field(c(points, dtype=np.float64), c(pos, dtype=np.float64), c(q, dtype=np.float64), radius)


def _worth(spec, size, domain) -> bool:
    """Whether an unresolved cell could hold more than ``cell_tol`` of U."""
    if isinstance(spec, HardWall):
        return True
    bound = getattr(spec, "bound", 1.0)
    return bound * float(np.prod(size)) > domain.cell_tol


def _refine_mask(centers, size, pos, q, kernel, spec, domain, phi):
    """Cells whose integrand the leaf rule would not resolve."""
    half = 0.5 * float(np.sqrt(np.sum(size * size)))
    jump = _jump(spec)
    if isinstance(kernel, IndicatorKernel):
        R = kernel.radius
        qp, qn = np.maximum(q, 0.0), np.minimum(q, 0.0)
        lo = _ball_sum(centers, pos, qp, R - half) + _ball_sum(centers, pos, qn, R + half)
        hi = _ball_sum(centers, pos, qp, R + half) + _ball_sum(centers, pos, qn, R - half)
        if jump is not None:
            return (lo < jump) & (hi >= jump) & _worth(spec, size, domain)
        return (lo != hi) & _worth(spec, size, domain)
    table = _table(kernel)
    k = min(pos.shape[0], 8)
    dist, idx = cKDTree(pos).query(centers, k=k)
    dist = dist.reshape(centers.shape[0], k)
    idx = idx.reshape(centers.shape[0], k)
    floor = 1e-3 * half
    grad = np.abs(table.derivative(np.maximum(dist - half, floor).ravel())).reshape(dist.shape)
    grad = np.sum(np.abs(q[idx]) * grad, axis=1)
    mask = np.zeros(centers.shape[0], dtype=bool)
    if table.epsilon == 0.0:
        mask |= dist[:, 0] < domain.near * float(size.max())
    if jump is not None:
        if _worth(spec, size, domain):
            mask |= np.abs(phi - jump) <= grad * half
    elif hasattr(spec, "lipschitz") and _worth(spec, size, domain):
        mask |= spec.lipschitz * grad * 2.0 * half > domain.phase_tol
    return mask


def quadrature_leaves(config: ChargeConfiguration, kernel, spec, domain: InteractionDomain,
                      extra: Optional[np.ndarray] = None):
    """Nodes and weights of the adaptive rule for U over the padded domain.

    ``extra`` holds additional positions (with unit charge) that steer the
    refinement, so that two configurations can share one set of nodes.
    """
    pos, q = _canonical(config)
    if extra is not None and len(extra):
        pos = np.ascontiguousarray(np.vstack([pos, extra]))
        q = np.concatenate([q, np.ones(len(extra))])
    integ = domain.integration_box(config.box, kernel)
    h = domain.spacing(kernel)
    shape = [max(1, int(math.ceil((b - a) / h - 1e-9))) for a, b in zip(integ.lower, integ.upper)]
    size = np.array([(b - a) / n for a, b, n in zip(integ.lower, integ.upper, shape)])
    axes = [integ.lower[i] + (np.arange(n) + 0.5) * size[i] for i, n in enumerate(shape)]
    grids = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    d = centers.shape[1]
    ref_x, ref_w = tensor_rule([-0.5] * d, [0.5] * d, 1, domain.order)
    offsets = np.array(np.meshgrid(*[[-0.25, 0.25]] * d, indexing="ij")).reshape(d, -1).T
    node_parts, weight_parts = [], []
    for level in range(domain.refine_levels + 1):
        if centers.shape[0] == 0:
            break
        if pos.shape[0] == 0 or level == domain.refine_levels or size.max() <= domain.min_cell:
            split = np.zeros(centers.shape[0], dtype=bool)
        else:
            phi = kernel_field(kernel, centers, pos, q) if _jump(spec) is not None else None
            if isinstance(spec, HardWall) and np.any(phi >= spec.threshold):
                # U is already infinite; the offending centres are enough
                hit = centers[phi >= spec.threshold]
                node_parts.append(hit)
                weight_parts.append(np.full(hit.shape[0], float(np.prod(size))))
                break
            split = _refine_mask(centers, size, pos, q, kernel, spec, domain, phi)
        keep = centers[~split]
        node_parts.append((keep[:, None, :] + ref_x[None, :, :] * size).reshape(-1, d))
        weight_parts.append(np.tile(ref_w * float(np.prod(size)), keep.shape[0]))
        centers = (centers[split][:, None, :] + offsets[None, :, :] * size).reshape(-1, d)
        size = 0.5 * size
    return np.concatenate(node_parts), np.concatenate(weight_parts)


# ---------------------------------------------------------------------------
# U and its increments
# ---------------------------------------------------------------------------

def pairwise_rule_applies(kernel, spec, charges) -> bool:
    """True when overlap of two balls is exactly the hard-wall condition."""
    if not (isinstance(kernel, IndicatorKernel) and isinstance(spec, HardWall)):
        return False
    q = np.asarray(charges)
    if q.size == 0:
        return True
    c = q[0]
    return bool(np.all(q == c)) and c < spec.threshold <= 2.0 * c


def hard_sphere_energy(config: ChargeConfiguration, kernel: IndicatorKernel) -> float:
    pos = config.positions
    if pos.shape[0] < 2:
        return 0.0
    pairs = cKDTree(pos).query_pairs(2.0 * kernel.radius, output_type="ndarray")
    if pairs.size == 0:
        return 0.0
    gaps = np.sum((pos[pairs[:, 0]] - pos[pairs[:, 1]]) ** 2, axis=1)
    return math.inf if np.any(gaps < 4.0 * kernel.radius ** 2) else 0.0


def _integrate(spec, phi, weights) -> float:
    vals = spec(phi)
    if isinstance(spec, HardWall):
        return math.inf if np.any(np.isinf(vals)) else 0.0
    return float(np.sum(weights * vals))


def interaction_energy(config: ChargeConfiguration, kernel, spec: PotentialSpec,
                       domain: Optional[InteractionDomain] = None,
                       method: str = "auto") -> float:
    """U(eta) by adaptive quadrature over the padded domain.

    ``method="auto"`` uses the exact pairwise overlap rule where it coincides
    with the field threshold (indicator kernel, hard wall, equal charges);
    ``"quadrature"`` always integrates.
    """
    domain = domain or InteractionDomain()
    _check_kernel_spec(kernel, spec)
    if config.n == 0:
        return 0.0
    if method == "auto" and pairwise_rule_applies(kernel, spec, config.charges):
        return hard_sphere_energy(config, kernel)
    if method not in ("auto", "quadrature"):
        raise PotentialError(f"unknown method {method!r}")
    nodes, weights = quadrature_leaves(config, kernel, spec, domain)
    pos, q = _canonical(config)
    return _integrate(spec, kernel_field(kernel, nodes, pos, q), weights)


@dataclass(frozen=True)
class Move:
    """kind in {insert, delete, displace, recharge}."""

    kind: str
    index: int = -1
    position: Optional[tuple] = None
    charge: Optional[float] = None


def apply_move(config: ChargeConfiguration, move: Move) -> ChargeConfiguration:
    pos, q = config.positions, config.charges
    n = config.n
    if move.kind == "insert":
        if move.position is None or move.charge is None:
            raise PotentialError("insert needs a position and a charge")
        new_pos = np.vstack([pos, np.asarray(move.position, dtype=np.float64)[None, :]])
        return ChargeConfiguration(config.box, new_pos, np.append(q, float(move.charge)))
    if not 0 <= move.index < n:
        raise IndexError(f"move index {move.index} out of range for {n} particles")
    if move.kind == "delete":
        keep = np.arange(n) != move.index
        return ChargeConfiguration(config.box, pos[keep], q[keep])
    if move.kind == "displace":
        new_pos = pos.copy()
        new_pos[move.index] = np.asarray(move.position, dtype=np.float64)
        return ChargeConfiguration(config.box, new_pos, q)
    if move.kind == "recharge":
        new_q = q.copy()
        new_q[move.index] = float(move.charge)
        return ChargeConfiguration(config.box, pos, new_q)
    raise PotentialError(f"unknown move kind {move.kind!r}")


def _moved_points(config: ChargeConfiguration, move: Move) -> np.ndarray:
    d = config.box.d
    pts = []
    if move.position is not None:
        pts.append(np.asarray(move.position, dtype=np.float64))
    if move.kind in ("delete", "displace", "recharge"):
        pts.append(config.positions[move.index])
    return np.array(pts).reshape(-1, d)


def delta_energy(config: ChargeConfiguration, kernel, spec: PotentialSpec,
                 domain: Optional[InteractionDomain], move: Move) -> float:
    """U(eta') - U(eta) for the configuration after ``move``.

    Both energies are integrated on one node set, refined around the particles
    of eta and the moved one, so that a move and its reverse give exactly
    opposite increments.
    """
    domain = domain or InteractionDomain()
    _check_kernel_spec(kernel, spec)
    new = apply_move(config, move)
    if move.kind == "displace" and np.array_equal(new.positions, config.positions):
        return 0.0
    if move.kind == "recharge" and np.array_equal(new.charges, config.charges):
        return 0.0
    if pairwise_rule_applies(kernel, spec, np.concatenate([config.charges, new.charges])):
        return _hard_sphere_delta(config, kernel, move)
    base = new if move.kind == "insert" else config
    extra = _moved_points(config, move)[:1] if move.kind == "displace" else None
    nodes, weights = quadrature_leaves(base, kernel, spec, domain, extra=extra)
    pos0, q0 = _canonical(config)
    pos1, q1 = _canonical(new)
    u0 = _integrate(spec, kernel_field(kernel, nodes, pos0, q0), weights)
    u1 = _integrate(spec, kernel_field(kernel, nodes, pos1, q1), weights)
    if math.isinf(u0) and u0 == u1:
        return 0.0
    return u1 - u0


def _hard_sphere_delta(config: ChargeConfiguration, kernel: IndicatorKernel, move: Move) -> float:
    """Increment for hard spheres; assumes the current configuration is admissible."""
    pos = np.ascontiguousarray(config.positions)
    reach2 = 4.0 * kernel.radius ** 2
    if move.kind in ("delete", "recharge"):
        return 0.0
    y = np.asarray(move.position, dtype=np.float64)
    skip = move.index if move.kind == "displace" else -1
    if pos.shape[0] == 0:
        return 0.0
    return math.inf if core.min_distance2(pos, y, skip) < reach2 else 0.0


# ---------------------------------------------------------------------------
# the renormalizer N(z) = E cos(alpha phi^z(0))
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialQuad:
    """Radial rule: ``panels`` geometric panels where the integrand is smooth, one
    Gauss-Legendre panel per half-oscillation of the cosine (up to
    ``max_half_periods``), and the non-oscillating remainder inside."""

    panels: int = 200
    order: int = 16
    max_half_periods: int = 4000
    decay_lengths: float = 40.0

    def refined(self) -> "RadialQuad":
        return RadialQuad(2 * self.panels, self.order, 2 * self.max_half_periods, self.decay_lengths)


def _radial_exponent_term(table: KernelTable, c: float, quad: RadialQuad) -> float:
    """int_{R^d} (cos(c G(|u|)) - 1) du."""
    d, m = table.params.d, table.params.m
    x, w = np.polynomial.legendre.leggauss(quad.order)
    r_max = quad.decay_lengths / m
    if table.mode == 1:
        k_top = int(c * table.values[0] / math.pi)
        if k_top > quad.max_half_periods:
            raise QuadratureError(f"renormalizer: {k_top} half-periods exceed the limit "
                                  f"{quad.max_half_periods}")
    else:
        k_top = quad.max_half_periods
    k = np.arange(k_top, 0, -1)
    osc = table.inverse(k * math.pi / c) if k.size else np.empty(0)
    r_in = float(osc[0]) if table.mode == 0 else 0.0
    if table.mode == 0 and not r_in > 0:
        raise QuadratureError("renormalizer: oscillation radius underflow")
    start = float(osc[-1]) if osc.size else max(table.r_min, 1e-12 * r_max)
    smooth = np.geomspace(start, r_max, quad.panels + 1)
    edges = np.unique(np.concatenate([[r_in], osc, smooth]))
    a, b = edges[:-1, None], edges[1:, None]
    rr = 0.5 * (b - a) * x + 0.5 * (b + a)
    vals = (np.cos(c * table(rr.ravel())) - 1.0).reshape(rr.shape) * rr ** (d - 1)
    total = float(np.sum(0.5 * (b - a)[:, 0] * (vals @ w)))
    if table.mode == 0:
        # inside r_in the cosine averages out; keep the exact "-1" part
        total -= r_in ** d / d
    return unit_sphere_area(d) * total


def renorm_exponent(z: float, alpha: float, law: ChargeLaw, kernel,
                    quad: Optional[RadialQuad] = None) -> float:
    quad = quad or RadialQuad()
    if not z > 0:
        raise PotentialError("z must be positive")
    if not law.symmetric:
        raise PotentialError("renormalizer needs a symmetric charge law")
    if alpha == 0:
        return 0.0
    table = _table(kernel)
    if table is None:
        raise PotentialError("renormalizer needs a Green's-function kernel")
    total = 0.0
    for s, p in zip(law.values, law.probs):
        c = abs(alpha * s) / math.sqrt(z)
        if c > 0 and p > 0:
            total += p * _radial_exponent_term(table, c, quad)
    return z * total


def renorm_normalizer(z: float, alpha: float, law: ChargeLaw, kernel,
                      quad: Optional[RadialQuad] = None) -> float:
    """N(z) = exp(z int sum_s p_s (cos(alpha s G(u)/sqrt z) - 1) du), in (0, 1]."""
    return math.exp(renorm_exponent(z, alpha, law, kernel, quad))
