"""Tensor-product Gauss-Legendre rules over axis-aligned boxes."""

from __future__ import annotations

import numpy as np


class QuadratureError(ArithmeticError):
    """Raised when a quadrature fails to reach its tolerance."""


def axis_rule(lo: float, hi: float, panels: int, order: int, breaks=()):
    """Composite Gauss-Legendre nodes/weights on [lo, hi], panels split at ``breaks``."""
    x, w = np.polynomial.legendre.leggauss(order)
    cuts = sorted({float(b) for b in breaks if lo < b < hi})
    edges = [lo, *cuts, hi]
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(round(panels * (b - a) / (hi - lo))))
        e = np.linspace(a, b, k + 1)
        half = 0.5 * np.diff(e)[:, None]
        mid = 0.5 * (e[1:] + e[:-1])[:, None]
        nodes.append((mid + half * x).ravel())
        weights.append((half * w).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def tensor_rule(lower, upper, panels: int, order: int, breaks=None):
    """Nodes (P, d) and weights (P,) of the tensor rule on a box."""
    d = len(lower)
    breaks = breaks or [()] * d
    rules = [axis_rule(lower[i], upper[i], panels, order, breaks[i]) for i in range(d)]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, wts


def integrate_box(func, lower, upper, breaks=None, tol: float = 1e-8, order: int = 8,
                  panels: int = 2, max_points: int = 4_000_000, chunk: int = 1 << 17):
    """Integrate ``func(points) -> values`` over a box, doubling panels until two
    successive estimates differ by less than ``tol`` (absolute, max over components).

    ``func`` may return shape (P,) or (P, k) for k integrands sharing the nodes.
    """
    d = len(lower)
    prev = None
    change = float("nan")
    while True:
        pts, wts = tensor_rule(lower, upper, panels, order, breaks)
        total = 0.0
        for a in range(0, pts.shape[0], chunk):
            vals = np.asarray(func(pts[a:a + chunk]))
            total = total + np.tensordot(wts[a:a + chunk], vals, axes=(0, 0))
        if prev is not None:
            change = float(np.max(np.abs(total - prev)))
            if change < tol:
                return total
        prev = total
        panels *= 2
        if (panels * order) ** d > max_points:
            raise QuadratureError(
                f"box quadrature did not reach tol={tol:g}: last change {change:.3g} "
                f"with {pts.shape[0]} nodes")
