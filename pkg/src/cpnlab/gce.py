"""Grand-canonical Metropolis sampler for exp(-lambda U) times the marked Poisson law.

Moves: insert (uniform position, charge from the law), delete (uniform
particle), displace (Gaussian step, rejected outside the box) and recharge
(fresh charge).  ``brute_force_gce`` evaluates the same expectations by
quadrature over n <= n_max particles and serves as the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .noise import Box, ChargeConfiguration, ChargeLaw
from .potential import (HardWall, IndicatorKernel, InteractionDomain, Move, apply_move,
                        delta_energy, interaction_energy, pairwise_rule_applies)
from .stats import EstimatorAccumulator, RngStream, summarize

MOVES = ("insert", "delete", "displace", "recharge")


class GCEError(ValueError):
    pass


class TruncationError(GCEError):
    """``n_max`` too small; carries the tail bound."""

    def __init__(self, bound: float, tol: float):
        super().__init__(f"truncation bound {bound:.3g} exceeds tolerance {tol:.3g}; raise n_max")
        self.bound = bound


@dataclass(frozen=True, eq=False)
class GCEConfig:
    box: Box
    z: float
    coupling: float
    law: ChargeLaw
    kernel: object
    spec: object
    domain: InteractionDomain = field(default_factory=InteractionDomain)
    mix: tuple = (0.3, 0.3, 0.3, 0.1)
    sigma_disp: Optional[float] = None
    steps: int = 10_000
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    stream_id: int = 0
    check_every: int = 10_000
    energy_tol: float = 1e-6

    def __post_init__(self):
        if not self.z > 0:
            raise GCEError("z must be positive")
        if not self.coupling >= 0:
            raise GCEError("coupling lambda must be >= 0")
        mix = tuple(float(p) for p in self.mix)
        if len(mix) != 4 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-12:
            raise GCEError("move mix needs 4 nonnegative probabilities summing to 1")
        if (mix[0] == 0) != (mix[1] == 0):
            raise GCEError("insert and delete must both be enabled or both disabled")
        object.__setattr__(self, "mix", mix)
        if not (self.steps > self.burn_in >= 0):
            raise GCEError("need steps > burn_in >= 0")
        if self.thinning < 1:
            raise GCEError("thinning must be >= 1")
        if self.sigma_disp is None:
            object.__setattr__(self, "sigma_disp", 0.5 * _length_scale(self.kernel))
        elif not self.sigma_disp > 0:
            raise GCEError("sigma_disp must be positive")

    @property
    def mean_count(self) -> float:
        return self.z * self.box.volume


def _length_scale(kernel) -> float:
    if isinstance(kernel, IndicatorKernel):
        return kernel.radius
    params = kernel if hasattr(kernel, "m") else kernel.params
    return 1.0 / params.m


@dataclass
class SamplerState:
    config: ChargeConfiguration
    energy: float = 0.0
    step: int = 0
    proposed: dict = field(default_factory=lambda: dict.fromkeys(MOVES, 0))
    accepted: dict = field(default_factory=lambda: dict.fromkeys(MOVES, 0))
    max_drift: float = 0.0

    @classmethod
    def initial(cls, gce: GCEConfig, config: Optional[ChargeConfiguration] = None) -> "SamplerState":
        config = config if config is not None else ChargeConfiguration.empty(gce.box)
        energy = 0.0 if gce.coupling == 0 else interaction_energy(config, gce.kernel, gce.spec, gce.domain)
        return cls(config, energy)

    def acceptance_rates(self) -> dict:
        return {k: self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan")
                for k in MOVES}


# ---------------------------------------------------------------------------
# Metropolis kernel
# ---------------------------------------------------------------------------

def _propose(state: SamplerState, gce: GCEConfig, rng: RngStream) -> tuple[str, Optional[Move]]:
    kind = MOVES[int(np.searchsorted(np.cumsum(gce.mix), rng.random(), side="right").clip(0, 3))]
    n = state.config.n
    if kind == "insert":
        y = gce.box.sample_uniform(rng, 1)[0]
        s = float(gce.law.sample(rng, 1)[0])
        return kind, Move("insert", position=tuple(y), charge=s)
    if n == 0:
        return kind, None
    idx = int(rng.integers(n))
    if kind == "delete":
        return kind, Move("delete", index=idx)
    if kind == "displace":
        y = state.config.positions[idx] + gce.sigma_disp * rng.normal(size=gce.box.d)
        return kind, Move("displace", index=idx, position=tuple(y))
    return kind, Move("recharge", index=idx, charge=float(gce.law.sample(rng, 1)[0]))


def log_acceptance(gce: GCEConfig, n: int, move: Move, du: float) -> float:
    """log of the Metropolis-Hastings ratio (before the min with 1)."""
    weight = 0.0 if gce.coupling == 0 else -gce.coupling * du
    p_ins, p_del = gce.mix[0], gce.mix[1]
    if move.kind in ("insert", "delete") and p_ins == 0:
        return -math.inf
    if move.kind == "insert":
        return math.log(gce.mean_count / (n + 1)) + math.log(p_del / p_ins) + weight
    if move.kind == "delete":
        return math.log(n / gce.mean_count) + math.log(p_ins / p_del) + weight
    return weight


def mcmc_step(state: SamplerState, gce: GCEConfig, rng: RngStream) -> SamplerState:
    """One proposal and its accept/reject; ``state`` is updated in place and returned."""
    kind, move = _propose(state, gce, rng)
    state.proposed[kind] += 1
    state.step += 1
    u = rng.random()
    if move is None:
        return state
    if move.kind == "displace" and not bool(gce.box.contains(np.asarray(move.position)[None, :])[0]):
        return state
    du = 0.0
    if gce.coupling > 0:
        du = delta_energy(state.config, gce.kernel, gce.spec, gce.domain, move)
        if du == math.inf:
            return state
    log_u = math.log(u) if u > 0 else -math.inf
    if log_u < log_acceptance(gce, state.config.n, move, du):
        state.config = apply_move(state.config, move)
        state.energy += du
        state.accepted[kind] += 1
    return state


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

Observable = Callable[[ChargeConfiguration], float]

BUILTIN_OBSERVABLES: dict[str, Observable] = {
    "N": lambda c: float(c.n),
    "N2": lambda c: float(c.n) ** 2,
    "charge": lambda c: float(np.sum(c.charges)),
}


@dataclass
class ChainResult:
    summaries: dict
    series: dict
    state: SamplerState
    samples: int

    def acceptance(self) -> dict:
        return self.state.acceptance_rates()


def _resolve(observables) -> dict[str, Observable]:
    if isinstance(observables, dict):
        return dict(observables)
    out = {}
    for name in observables:
        if name not in BUILTIN_OBSERVABLES:
            raise GCEError(f"unknown observable {name!r}")
        out[name] = BUILTIN_OBSERVABLES[name]
    return out


def run_chain(gce: GCEConfig, observables=("N",), stream=None,
              initial: Optional[ChargeConfiguration] = None) -> ChainResult:
    """Burn-in, then record observables every ``thinning`` steps.

    Summaries are (mean, batch-means stderr) with 32 batches.  If ``stream`` is
    a text file, each retained configuration is dumped with its step and U.
    """
    obs = _resolve(observables)
    rng = RngStream(gce.seed, gce.stream_id)
    state = SamplerState.initial(gce, initial)
    n_rec = (gce.steps - gce.burn_in) // gce.thinning
    batch = max(1, n_rec // 32)
    accs = {name: EstimatorAccumulator(batch) for name in obs}
    series = {name: np.empty(n_rec) for name in obs}
    k = 0
    for step in range(1, gce.steps + 1):
        mcmc_step(state, gce, rng)
        if gce.coupling > 0 and step % gce.check_every == 0:
            _check_cache(state, gce)
        if step > gce.burn_in and (step - gce.burn_in) % gce.thinning == 0 and k < n_rec:
            for name, fn in obs.items():
                v = fn(state.config)
                accs[name].push(v)
                series[name][k] = v
            if stream is not None:
                state.config.dump(stream, gce.z, gce.law, rng,
                                  prefix=f"step={step} U={state.energy:.17g} ")
            k += 1
    summaries = {name: summarize(acc) for name, acc in accs.items()}
    return ChainResult(summaries, series, state, k)


def _check_cache(state: SamplerState, gce: GCEConfig) -> None:
    full = interaction_energy(state.config, gce.kernel, gce.spec, gce.domain)
    drift = 0.0 if full == state.energy else abs(full - state.energy)
    state.max_drift = max(state.max_drift, drift)
    if not drift < 10.0 * gce.energy_tol * max(1.0, abs(full)):
        raise GCEError(f"cached energy drifted by {drift:.3g} at step {state.step}")
    state.energy = full


def run_chains(gce: GCEConfig, n_chains: int, observables=("N",)) -> dict:
    """Independent chains on substreams 0..n_chains-1, merged in index order."""
    from .stats import merge

    merged = None
    for k in range(n_chains):
        sub = GCEConfig(**{**gce.__dict__, "stream_id": RngStream(gce.seed, gce.stream_id).substream(k).stream_id})
        res = run_chain(sub, observables)
        accs = {}
        for name, xs in res.series.items():
            acc = EstimatorAccumulator(max(1, xs.size // 32))
            acc.extend(xs)
            accs[name] = acc
        merged = accs if merged is None else {n: merge(merged[n], accs[n]) for n in accs}
    return {name: summarize(acc) for name, acc in merged.items()}


# ---------------------------------------------------------------------------
# detailed balance
# ---------------------------------------------------------------------------

def log_density(gce: GCEConfig, config: ChargeConfiguration, energy: float) -> float:
    """log of (z|L|)^n / n! |L|^-n prod p_s exp(-lambda U) for an ordered tuple."""
    n = config.n
    logp = n * math.log(gce.z) - math.lgamma(n + 1)
    probs = dict(zip(gce.law.values, gce.law.probs))
    for s in config.charges:
        logp += math.log(probs[float(s)])
    if gce.coupling > 0:
        logp -= gce.coupling * energy
    return logp


def log_flow(gce: GCEConfig, config: ChargeConfiguration, move: Move, energy: float,
             du: float) -> float:
    """log pi(eta) q(eta -> eta') a(eta -> eta').

    Proposal densities are for ordered tuples: an insertion places the new
    particle at a uniformly chosen label among n+1, a deletion removes one
    given label.
    """
    n = config.n
    p_ins, p_del, p_dis, p_rec = gce.mix
    probs = dict(zip(gce.law.values, gce.law.probs))
    if move.kind == "insert":
        logq = math.log(p_ins) + math.log(probs[float(move.charge)]) - math.log(gce.box.volume) - math.log(n + 1)
    elif move.kind == "delete":
        logq = math.log(p_del) - math.log(n)
    elif move.kind == "recharge":
        logq = math.log(p_rec) - math.log(n) + math.log(probs[float(move.charge)])
    else:
        raise GCEError("flow is defined for insert, delete and recharge moves")
    loga = min(0.0, log_acceptance(gce, n, move, du))
    return log_density(gce, config, energy) + logq + loga


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def _poisson_weights(mean: float, n_max: int) -> np.ndarray:
    return np.array([mean ** n / math.factorial(n) for n in range(n_max + 1)])


def _overlap_fraction(dx: float, dy: float, h: float, reach: float, n_gl: int = 48) -> float:
    """P(|X - Y| < reach) for X, Y uniform on two h-squares with centre offset (dx, dy)."""
    # the difference X - Y has the tensor triangle density on [-h, h]^2 around the offset
    def tri_mass(a, b):
        a = np.clip(a, -h, h)
        b = np.clip(b, -h, h)

        def prim(v):
            return np.where(v < 0, h * v + 0.5 * v * v, h * v - 0.5 * v * v)

        return np.where(b > a, prim(b) - prim(a), 0.0) / (h * h)

    lo_u, hi_u = max(-h, -reach - dx), min(h, reach - dx)
    if hi_u <= lo_u:
        return 0.0
    cuts = sorted({lo_u, hi_u, *(c for c in (0.0, -dx) if lo_u < c < hi_u)})
    x, w = np.polynomial.legendre.leggauss(n_gl)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        # the sqrt edge behaviour is removed by the substitution u = mid +- half cos(theta)
        theta = 0.5 * math.pi * (x + 1.0)
        u = 0.5 * (a + b) - 0.5 * (b - a) * np.cos(theta)
        jac = 0.5 * (b - a) * np.sin(theta) * 0.5 * math.pi
        half = np.sqrt(np.maximum(reach * reach - (dx + u) ** 2, 0.0))
        tri_u = (h - np.abs(u)) / h
        total += float(np.sum(w * jac * tri_u * tri_mass(-dy - half, -dy + half)))
    return total / h


def hard_sphere_partition(box: Box, radius: float, cells: int) -> np.ndarray:
    """(P_0, P_1, P_2, P_3): probability that n uniform points in a square keep
    pairwise distance >= 2R.

    Cell pairs use the exact overlap probability; the triple term treats the
    three pair events as conditionally independent given the cells, an
    approximation that vanishes as the cells shrink.
    """
    if box.d != 2 or not np.allclose(box.widths, box.widths[0]):
        raise GCEError("the hard-sphere oracle is implemented for squares in d = 2")
    side = float(box.widths[0])
    h = side / cells
    reach = 2.0 * radius
    offs = np.arange(-(cells - 1), cells)
    frac = np.zeros((offs.size, offs.size))
    for i, a in enumerate(offs):
        for j, b in enumerate(offs):
            if j < i:
                frac[i, j] = frac[j, i]
                continue
            frac[i, j] = _overlap_fraction(a * h, b * h, h, reach)
    idx = np.arange(cells)
    ci, cj = np.meshgrid(idx, idx, indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    keep = 1.0 - frac[(ci[:, None] - ci[None, :]) + cells - 1, (cj[:, None] - cj[None, :]) + cells - 1]
    k = keep.shape[0]
    p2 = float(keep.sum()) / k ** 2
    p3 = float(np.einsum("ij,ji->", keep @ keep, keep)) / k ** 3
    return np.array([1.0, 1.0, p2, p3])


def _tail_terms(mean: float, n_max: int, p_last: float, box: Optional[Box] = None,
                radius: float = 0.0, n_far: int = 400) -> list[tuple[int, float]]:
    """Upper bounds on w_n P_n for n > n_max.

    Free case: P_n = 1.  Hard spheres: P_{n+1} <= P_n (1 - max(pi R^2, n pi R^2/4)/|L|),
    since the exclusion zone of n admissible centres contains n disjoint
    R-discs, each meeting the box in at least a quarter disc.
    """
    out = []
    p = p_last
    w = mean ** n_max / math.factorial(n_max)
    area = math.pi * radius ** 2
    for n in range(n_max, n_max + n_far):
        if box is not None:
            p *= max(0.0, 1.0 - max(area, n * area / 4.0) / box.volume)
        w *= mean / (n + 1)
        out.append((n + 1, w * p))
        if p == 0.0 or w * p < 1e-300:
            break
    return out


def _count_value(observable, n: int) -> float:
    if observable in ("N", "n"):
        return float(n)
    if observable in ("one", "1"):
        return 1.0
    if observable == "N2":
        return float(n * n)
    raise GCEError(f"observable {observable!r} is not a function of the count")


def brute_force_gce(gce: GCEConfig, n_max: int, observable: Union[str, Observable] = "N",
                    cells: int = 24, tol: Optional[float] = None) -> tuple[float, float]:
    """E[O] under the finite-volume Gibbs measure, truncated at n_max particles.

    Returns (expectation, truncation bound).  Count observables ("N", "one",
    "N2") at coupling 0 and hard spheres use closed weights; any other case
    integrates exp(-lambda U) over a midpoint grid of ``cells`` per axis.
    """
    mean = gce.mean_count
    w = _poisson_weights(mean, n_max)
    hard = (gce.coupling > 0 and isinstance(observable, str)
            and pairwise_rule_applies(gce.kernel, gce.spec, gce.law.values))
    if isinstance(observable, str) and (gce.coupling == 0 or hard):
        if hard:
            if n_max > 3:
                raise GCEError("the hard-sphere oracle supports n_max <= 3")
            probs = hard_sphere_partition(gce.box, gce.kernel.radius, cells)[: n_max + 1]
            tail = _tail_terms(mean, n_max, probs[-1], gce.box, gce.kernel.radius)
        else:
            probs = np.ones(n_max + 1)
            tail = _tail_terms(mean, n_max, 1.0)
        values = np.array([_count_value(observable, n) for n in range(n_max + 1)])
        s0 = float(np.dot(w, probs))
        est = float(np.dot(w * probs, values)) / s0
        t0 = sum(b for _, b in tail)
        t_obs = sum(abs(_count_value(observable, n)) * b for n, b in tail)
        # |(S1 + T1)/(S0 + T0) - S1/S0| <= max(T1, |est| T0) / S0
        bound = 0.0 if observable in ("one", "1") else max(t_obs, abs(est) * t0) / s0
    else:
        est, bound = _brute_generic(gce, n_max, observable, cells)
    if tol is not None and bound > tol:
        raise TruncationError(bound, tol)
    return est, bound


def _brute_generic(gce: GCEConfig, n_max: int, observable, cells: int,
                   max_evals: int = 2_000_000) -> tuple[float, float]:
    """Midpoint-grid sums over n-tuples of positions and charges (small n only)."""
    box = gce.box
    obs = observable if callable(observable) else (lambda c: _count_value(observable, c.n))
    axes = [box.lower[i] + (np.arange(cells) + 0.5) * box.widths[i] / cells for i in range(box.d)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    k = grid.shape[0]
    if sum((k * len(gce.law.values)) ** n for n in range(n_max + 1)) > max_evals:
        raise GCEError("brute-force grid too large; lower cells or n_max")
    mean = gce.mean_count
    num = den = 0.0
    from itertools import product

    for n in range(n_max + 1):
        wn = mean ** n / math.factorial(n) / k ** n
        for cells_idx in product(range(k), repeat=n):
            pos = grid[list(cells_idx)].reshape(n, box.d)
            for charges in product(range(len(gce.law.values)), repeat=n):
                q = np.array([gce.law.values[c] for c in charges])
                p = float(np.prod([gce.law.probs[c] for c in charges]))
                cfg = ChargeConfiguration(box, pos, q)
                u = 0.0 if gce.coupling == 0 else interaction_energy(cfg, gce.kernel, gce.spec, gce.domain)
                weight = wn * p * (0.0 if u == math.inf else math.exp(-gce.coupling * u))
                num += weight * obs(cfg)
                den += weight
    est = num / den
    # the Gibbs tail is bounded by the free one when U >= 0
    t0 = sum(b for _, b in _tail_terms(mean, n_max, 1.0))
    return est, t0 / den * max(1.0, abs(est))
