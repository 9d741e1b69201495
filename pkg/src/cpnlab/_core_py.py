"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Used when the extension is not built or when ``CPNLAB_PURE_PYTHON=1``.
"""

import numpy as np

R_FLOOR = 1e-12
_CHUNK = 1 << 16


def table_eval(r, mode, u0, du, scale, coef, radii, values, r_min, r_max, p_lo, p_hi, mass):
    r = np.asarray(r, dtype=np.float64)
    n = values.shape[0]
    out = np.empty_like(r)
    hi = r > r_max
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out[hi] = values[-1] * (r_max / r[hi]) ** p_hi * np.exp(-mass * (r[hi] - r_max))
        if mode == 0:
            lo = r < r_min
            out[lo] = values[0] * (r_min / r[lo]) ** p_lo
            mid = ~(hi | lo)
            u = np.log(r[mid])
        else:
            mid = ~hi
            u = np.log1p(r[mid] / scale)
    t = (u - u0) / du
    near = np.clip(np.floor(t + 0.5).astype(np.int64), 0, n - 1)
    i = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
    x = u - (u0 + i * du)
    c = coef[i]
    val = np.exp(((c[:, 0] * x + c[:, 1]) * x + c[:, 2]) * x + c[:, 3])
    exact = radii[near] == r[mid]
    val[exact] = values[near[exact]]
    out[mid] = val
    return out


def kernel_field(points, pos, q, mode, u0, du, scale, coef, radii, values,
                 r_min, r_max, p_lo, p_hi, mass):
    P = points.shape[0]
    out = np.zeros(P)
    if pos.shape[0] == 0:
        return out
    step = max(1, _CHUNK // pos.shape[0])
    for a in range(0, P, step):
        diff = points[a:a + step, None, :] - pos[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        np.maximum(r, R_FLOOR, out=r)
        g = table_eval(r.ravel(), mode, u0, du, scale, coef, radii, values,
                       r_min, r_max, p_lo, p_hi, mass).reshape(r.shape)
        out[a:a + step] = g @ q
    return out


def indicator_field(points, pos, q, radius):
    P = points.shape[0]
    out = np.zeros(P)
    if pos.shape[0] == 0:
        return out
    step = max(1, _CHUNK // pos.shape[0])
    rr = radius * radius
    for a in range(0, P, step):
        diff = points[a:a + step, None, :] - pos[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        out[a:a + step] = (r2 < rr).astype(np.float64) @ q
    return out


def cos_sum(phi, alpha, weights):
    return float(np.sum(weights * (np.cos(alpha * phi) - 1.0)))


def min_distance2(pos, y, skip):
    if pos.shape[0] == 0:
        return 1e308
    r2 = np.sum((pos - y) ** 2, axis=1)
    if 0 <= skip < r2.shape[0]:
        r2[skip] = np.inf
    best = float(r2.min()) if r2.shape[0] else 1e308
    return min(best, 1e308)
