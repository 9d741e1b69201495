"""Marked Poisson noise in a box: sampling, pairings and exact oracles.

A configuration ``eta = sum_j s_j delta(x - y_j)`` has a Poisson(z|Box|) number
of points, i.i.d. uniform positions and i.i.d. charges from a finitely
supported :class:`ChargeLaw`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .quadrature import integrate_box
from .stats import RngStream


class NoiseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# boxes and charge laws
# ---------------------------------------------------------------------------

def _signed_permutation(R: np.ndarray) -> bool:
    R = np.asarray(R)
    return (R.ndim == 2 and R.shape[0] == R.shape[1]
            and np.all(np.isin(R, (-1, 0, 1)))
            and np.all(np.sum(np.abs(R), axis=0) == 1)
            and np.all(np.sum(np.abs(R), axis=1) == 1))


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or len(lo) == 0:
            raise NoiseError("box corners must have the same positive dimension")
        if not all(a < b for a, b in zip(lo, hi)):
            raise NoiseError(f"box needs lower < upper componentwise, got {lo} / {hi}")
        if not all(math.isfinite(v) for v in lo + hi):
            raise NoiseError("box corners must be finite")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, side: float, d: int, origin: float = 0.0) -> "Box":
        return cls((origin,) * d, (origin + side,) * d)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lower, self.upper))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.lower) & (p <= self.upper), axis=1)

    def padded(self, pad: float) -> "Box":
        return Box(tuple(a - pad for a in self.lower), tuple(b + pad for b in self.upper))

    def intersect(self, other: "Box"):
        lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        hi = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        if all(a < b for a, b in zip(lo, hi)):
            return Box(lo, hi)
        return None

    def split(self, axis: int = 0) -> tuple["Box", "Box"]:
        mid = 0.5 * (self.lower[axis] + self.upper[axis])
        up = list(self.upper)
        lo = list(self.lower)
        up[axis] = mid
        lo[axis] = mid
        return Box(self.lower, tuple(up)), Box(tuple(lo), self.upper)

    def scaled(self, factor: float) -> "Box":
        return Box(tuple(factor * a for a in self.lower), tuple(factor * b for b in self.upper))

    def transformed(self, R, shift) -> "Box":
        """Image under x -> R x + shift; R must map axes to axes."""
        if not _signed_permutation(R):
            raise NoiseError("boxes only transform under signed permutations")
        a = np.asarray(R) @ np.asarray(self.lower) + shift
        b = np.asarray(R) @ np.asarray(self.upper) + shift
        return Box(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)))

    def sample_uniform(self, rng: RngStream, n: int) -> np.ndarray:
        out = np.empty((n, self.d))
        for i, (a, b) in enumerate(zip(self.lower, self.upper)):
            out[:, i] = rng.uniform(a, b, n)
        return out

    def describe(self) -> str:
        return ";".join(f"{a!r}:{b!r}" for a, b in zip(self.lower, self.upper))


@dataclass(frozen=True)
class ChargeLaw:
    """Finitely supported charge distribution on [-c, c]."""

    values: tuple
    probs: tuple
    name: str = "discrete"

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        p = tuple(float(x) for x in self.probs)
        if len(v) == 0 or len(v) != len(p):
            raise NoiseError("charge law needs matching non-empty values/probabilities")
        if any(x < 0 for x in p) or abs(math.fsum(p) - 1.0) > 1e-12:
            raise NoiseError(f"probabilities must be >= 0 and sum to 1, got {p}")
        if not all(math.isfinite(x) for x in v):
            raise NoiseError("charges must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def two_point_symmetric(cls, c: float = 1.0) -> "ChargeLaw":
        if not c > 0:
            raise NoiseError("c must be positive")
        return cls((-c, c), (0.5, 0.5), "two_point_symmetric")

    @classmethod
    def point_mass(cls, c: float = 1.0) -> "ChargeLaw":
        return cls((c,), (1.0,), "point_mass")

    @classmethod
    def discrete(cls, pairs: Sequence[tuple[float, float]]) -> "ChargeLaw":
        return cls(tuple(s for s, _ in pairs), tuple(p for _, p in pairs))

    @property
    def bound(self) -> float:
        return max(abs(v) for v in self.values)

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    @property
    def second_moment(self) -> float:
        return math.fsum(v * v * p for v, p in zip(self.values, self.probs))

    @property
    def symmetric(self) -> bool:
        mass = {}
        for v, p in zip(self.values, self.probs):
            mass[v] = mass.get(v, 0.0) + p
        return all(abs(mass.get(-v, 0.0) - p) <= 1e-12 for v, p in mass.items())

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        vals = np.asarray(self.values)
        if len(vals) == 1:
            return np.full(n, vals[0])
        if len(vals) == 2:
            return np.where(rng.random(n) < self.probs[0], vals[0], vals[1])
        cdf = np.cumsum(self.probs)[:-1]
        return vals[np.searchsorted(cdf, rng.random(n), side="right")]

    def describe(self) -> str:
        if self.name == "two_point_symmetric":
            return f"two_point_symmetric({self.values[1]!r})"
        if self.name == "point_mass":
            return f"point_mass({self.values[0]!r})"
        return "discrete(" + ",".join(f"{v!r}:{p!r}" for v, p in zip(self.values, self.probs)) + ")"

    @classmethod
    def parse(cls, text: str) -> "ChargeLaw":
        """Inverse of :meth:`describe`."""
        text = text.strip()
        name, _, rest = text.partition("(")
        if not rest.endswith(")"):
            raise NoiseError(f"bad charge law descriptor {text!r}")
        body = rest[:-1]
        if name == "two_point_symmetric":
            return cls.two_point_symmetric(float(body))
        if name == "point_mass":
            return cls.point_mass(float(body))
        if name == "discrete":
            pairs = [tuple(float(x) for x in item.split(":")) for item in body.split(",")]
            return cls.discrete(pairs)
        raise NoiseError(f"unknown charge law {name!r}")


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChargeConfiguration:
    box: Box
    positions: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, self.box.d)
        q = np.ascontiguousarray(self.charges, dtype=np.float64).ravel()
        if pos.shape[0] != q.shape[0]:
            raise NoiseError("positions and charges differ in length")
        if pos.shape[0] and not np.all(self.box.contains(pos)):
            raise NoiseError("configuration has positions outside its box")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", q)

    @classmethod
    def empty(cls, box: Box) -> "ChargeConfiguration":
        return cls(box, np.empty((0, box.d)), np.empty(0))

    @property
    def n(self) -> int:
        return int(self.charges.shape[0])

    def __len__(self):
        return self.n

    def merge(self, other: "ChargeConfiguration", box: Box | None = None) -> "ChargeConfiguration":
        if box is None:
            box = Box(tuple(np.minimum(self.box.lower, other.box.lower)),
                      tuple(np.maximum(self.box.upper, other.box.upper)))
        return ChargeConfiguration(box, np.vstack([self.positions, other.positions]),
                                   np.concatenate([self.charges, other.charges]))

    def scaled(self, factor: float) -> "ChargeConfiguration":
        return ChargeConfiguration(self.box, self.positions, self.charges * factor)

    def permuted(self, perm) -> "ChargeConfiguration":
        perm = np.asarray(perm)
        return ChargeConfiguration(self.box, self.positions[perm], self.charges[perm])

    def dump(self, fh, z: float, law: ChargeLaw, stream: RngStream | None = None,
             prefix: str = "") -> None:
        sid = "none" if stream is None else f"{stream.seed}:{stream.stream_id}"
        fh.write(f"# {prefix}d={self.box.d} box={self.box.describe()} z={z!r} "
                 f"law={law.describe()} stream={sid} n={self.n}\n")
        for s, y in zip(self.charges, self.positions):
            fh.write(" ".join(f"{v:.17g}" for v in (s, *y)) + "\n")


def read_configuration(fh) -> ChargeConfiguration:
    """Read one record written by :meth:`ChargeConfiguration.dump`."""
    header = fh.readline()
    if not header.startswith("#"):
        raise NoiseError("missing configuration header")
    meta = dict(tok.split("=", 1) for tok in header[1:].split() if "=" in tok)
    d = int(meta["d"])
    lo, hi = zip(*(tuple(float(v) for v in part.split(":")) for part in meta["box"].split(";")))
    n = int(meta["n"])
    rows = np.array([[float(v) for v in fh.readline().split()] for _ in range(n)]).reshape(n, d + 1)
    return ChargeConfiguration(Box(lo, hi), rows[:, 1:], rows[:, 0])


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

class TestFunction:
    """Base class: finite sums of Gaussian bumps and box indicators."""

    __test__ = False  # keep pytest from collecting this class

    def terms(self) -> list:
        raise NotImplementedError

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(x.shape[0])
        for term in self.terms():
            out += term(x)
        return out

    def __add__(self, other: "TestFunction") -> "FiniteSum":
        return FiniteSum(tuple(self.terms()) + tuple(other.terms()))

    def scaled(self, factor: float) -> "TestFunction":
        return FiniteSum(tuple(t.scaled(factor) for t in self.terms()))

    def breakpoints(self, axis: int) -> tuple:
        pts = []
        for t in self.terms():
            pts.extend(t.breakpoints(axis))
        return tuple(sorted(set(pts)))

    def integral(self, box: Box | None = None) -> float:
        return math.fsum(t.integral(box) for t in self.terms())

    def integral_sq(self, box: Box | None = None) -> float:
        return self.inner(self, box)

    def inner(self, other: "TestFunction", box: Box | None = None) -> float:
        return math.fsum(_product_integral(a, b, box) for a in self.terms() for b in other.terms())

    def transformed(self, R, shift) -> "TestFunction":
        return FiniteSum(tuple(t.transformed(R, shift) for t in self.terms()))


@dataclass(frozen=True)
class GaussianBump(TestFunction):
    """amplitude * exp(-|x - center|^2 / (2 width^2))"""

    center: tuple
    width: float
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.width > 0:
            raise NoiseError("bump width must be positive")

    def terms(self):
        return [self]

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r2 = np.zeros(x.shape[0])
        for i, c in enumerate(self.center):
            r2 += (x[:, i] - c) ** 2
        return self.amplitude * np.exp((-0.5 / self.width ** 2) * r2)

    def breakpoints(self, axis):
        return ()

    def scaled(self, factor):
        return GaussianBump(self.center, self.width, self.amplitude * factor)

    def integral(self, box=None):
        w = self.width
        if box is None:
            return self.amplitude * (2.0 * math.pi * w * w) ** (0.5 * len(self.center))
        s = math.sqrt(2.0) * w
        out = self.amplitude
        for c, a, b in zip(self.center, box.lower, box.upper):
            out *= w * math.sqrt(0.5 * math.pi) * (special.erf((b - c) / s) - special.erf((a - c) / s))
        return float(out)

    def transformed(self, R, shift):
        c = np.asarray(R) @ np.asarray(self.center) + np.asarray(shift)
        return GaussianBump(tuple(c), self.width, self.amplitude)

    def rescaled(self, alpha: float, d: int) -> "GaussianBump":
        """y -> alpha^((d-2)/2 - d) f(y / alpha)."""
        amp = self.amplitude * alpha ** (0.5 * (d - 2) - d)
        return GaussianBump(tuple(alpha * c for c in self.center), alpha * self.width, amp)


@dataclass(frozen=True)
class BoxIndicator(TestFunction):
    box: Box
    amplitude: float = 1.0

    def terms(self):
        return [self]

    def __call__(self, x):
        return self.amplitude * self.box.contains(x).astype(np.float64)

    def breakpoints(self, axis):
        return (self.box.lower[axis], self.box.upper[axis])

    def scaled(self, factor):
        return BoxIndicator(self.box, self.amplitude * factor)

    def integral(self, box=None):
        inter = self.box if box is None else self.box.intersect(box)
        return 0.0 if inter is None else self.amplitude * inter.volume

    def transformed(self, R, shift):
        return BoxIndicator(self.box.transformed(R, shift), self.amplitude)


@dataclass(frozen=True)
class FiniteSum(TestFunction):
    parts: tuple

    def terms(self):
        out = []
        for p in self.parts:
            out.extend(p.terms())
        return out


def _product_integral(a, b, box: Box | None) -> float:
    if isinstance(a, BoxIndicator) and isinstance(b, BoxIndicator):
        inter = a.box.intersect(b.box)
        if inter is not None and box is not None:
            inter = inter.intersect(box)
        return 0.0 if inter is None else a.amplitude * b.amplitude * inter.volume
    if isinstance(a, BoxIndicator):
        a, b = b, a
    if isinstance(b, BoxIndicator):
        region = b.box if box is None else b.box.intersect(box)
        return 0.0 if region is None else b.amplitude * a.integral(region)
    ca, cb = np.asarray(a.center), np.asarray(b.center)
    va, vb = a.width ** 2, b.width ** 2
    w2 = va * vb / (va + vb)
    c = (ca * vb + cb * va) / (va + vb)
    amp = a.amplitude * b.amplitude * math.exp(-0.5 * float(np.sum((ca - cb) ** 2)) / (va + vb))
    return GaussianBump(tuple(c), math.sqrt(w2), amp).integral(box)


# ---------------------------------------------------------------------------
# sampling and pairings
# ---------------------------------------------------------------------------

def _check_activity(z: float) -> None:
    if not (z > 0 and math.isfinite(z)):
        raise NoiseError(f"activity z must be positive, got {z!r}")


def sample_configuration(box: Box, z: float, law: ChargeLaw, rng: RngStream) -> ChargeConfiguration:
    _check_activity(z)
    n = int(rng.poisson(z * box.volume))
    pos = box.sample_uniform(rng, n)
    return ChargeConfiguration(box, pos, law.sample(rng, n))


def pair_noise(config: ChargeConfiguration, f: TestFunction) -> float:
    """<eta, f> = sum_j s_j f(y_j)."""
    if config.n == 0:
        return 0.0
    return float(np.dot(config.charges, f(config.positions)))


def sample_pairings(box: Box, z: float, law: ChargeLaw, weight, rng: RngStream,
                    n_samples: int, charge_scale: float = 1.0,
                    chunk_points: int = 1 << 21) -> np.ndarray:
    """``n_samples`` independent draws of sum_j s_j * charge_scale * weight(y_j).

    ``weight`` maps (P, d) points to (P,) values; pass the test function for
    the noise pairing or G*f for the field pairing.
    """
    _check_activity(z)
    counts = rng.poisson(z * box.volume, size=n_samples)
    out = np.zeros(n_samples)
    start = 0
    while start < n_samples:
        csum = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(csum, chunk_points, side="right")))
        stop = min(stop, n_samples)
        c = counts[start:stop]
        total = int(c.sum())
        if total:
            pos = box.sample_uniform(rng, total)
            q = law.sample(rng, total) * charge_scale
            vals = q * weight(pos)
            nonempty = c > 0
            offsets = np.concatenate([[0], np.cumsum(c)[:-1]])[nonempty]
            out[start:stop][nonempty] = np.add.reduceat(vals, offsets)
        start = stop
    return out


# ---------------------------------------------------------------------------
# analytic oracles
# ---------------------------------------------------------------------------

def lk_exponent(weight, box: Box, z: float, law: ChargeLaw, t, charge_scale: float = 1.0,
                tol: float = 1e-8, breaks=None) -> np.ndarray:
    """z * sum_s p_s int_box (exp(i t s' w(x)) - 1) dx for every t (s' = charge_scale*s)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    vals = np.asarray(law.values) * charge_scale
    probs = np.asarray(law.probs)

    def integrand(x):
        g = weight(x)
        phase = np.exp(1j * g[:, None, None] * t[None, :, None] * vals[None, None, :]) - 1.0
        return phase @ probs

    res = integrate_box(integrand, box.lower, box.upper, breaks=breaks, tol=tol / max(z, 1.0))
    return z * np.asarray(res)


def noise_char_analytic(box: Box, z: float, law: ChargeLaw, f: TestFunction, t,
                        tol: float = 1e-8, charge_scale: float = 1.0):
    """Exact characteristic function E exp(i t <eta, f>) by the Levy-Khinchine formula."""
    _check_activity(z)
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = np.ones(t_arr.shape, dtype=np.complex128)
    nz = t_arr != 0
    if np.any(nz) and f.terms():
        breaks = [f.breakpoints(i) for i in range(box.d)]
        out[nz] = np.exp(lk_exponent(f, box, z, law, t_arr[nz], charge_scale, tol, breaks))
    return complex(out[0]) if np.ndim(t) == 0 else out


def campbell_moments(box: Box, z: float, law: ChargeLaw, f: TestFunction,
                     charge_scale: float = 1.0) -> tuple[float, float]:
    """(mean, variance) of <eta, f> from Campbell's theorem."""
    _check_activity(z)
    mean = z * law.mean * charge_scale * f.integral(box)
    var = z * law.second_moment * charge_scale ** 2 * f.integral_sq(box)
    return mean, var
