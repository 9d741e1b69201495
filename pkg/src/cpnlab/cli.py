"""Config-driven command line entry point.

A config is an INI file with the sections ``[experiment]``, ``[model]``,
``[probe]`` and ``[table]``.  Every experiment writes one ``key=value`` record
per line; reals carry 17 significant digits so a record reproduces the exact
double it came from.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Optional

import numpy as np

log = logging.getLogger("cpnlab")

KINDS = ("kernel-table", "noise-sample", "field-sample", "gce", "ecf-sweep",
         "blockspin", "triviality", "expansion")


# ---------------------------------------------------------------------------
# value parsers
# ---------------------------------------------------------------------------

def _floats(text: str, sep: str = ",") -> list[float]:
    return [float(v) for v in text.split(sep) if v.strip()]


def _call(text: str) -> tuple[str, str]:
    """'name(args)' -> (name, args); a bare name gives empty args."""
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", text)
    if not m:
        raise ValueError(f"expected name or name(args), got {text!r}")
    return m.group(1), m.group(2) or ""


def parse_box(text: str):
    from .noise import Box

    axes = [part.split(":") for part in text.split(",")]
    if any(len(a) != 2 for a in axes):
        raise ValueError("box must be lo:hi per axis, comma separated")
    lo, hi = zip(*((float(a), float(b)) for a, b in axes))
    return Box(lo, hi)


def parse_test_function(text: str):
    """'bump(cx,cy; w[; A]) + indicator(lo:hi,lo:hi[; A])', or 'zero'."""
    from .noise import BoxIndicator, FiniteSum, GaussianBump

    if text.strip() == "zero":
        return FiniteSum(())
    terms = []
    for part in re.split(r"\)\s*\+", text):
        part = part.strip()
        if not part.endswith(")"):
            part += ")"
        name, body = _call(part)
        fields = [s.strip() for s in body.split(";")]
        amp = float(fields[2 if name == "bump" else 1]) if len(fields) == (3 if name == "bump" else 2) else 1.0
        if name == "bump" and len(fields) in (2, 3):
            terms.append(GaussianBump(tuple(_floats(fields[0])), float(fields[1]), amp))
        elif name == "indicator" and len(fields) in (1, 2):
            terms.append(BoxIndicator(parse_box(fields[0]), amp))
        else:
            raise ValueError(f"bad test function term {part!r}")
    return terms[0] if len(terms) == 1 else FiniteSum(tuple(terms))


def parse_kernel(text: str):
    """('green' | 'mollified' | 'indicator', parameter)."""
    name, body = _call(text)
    if name == "green" and not body:
        return name, None
    if name in ("mollified", "indicator"):
        v = float(body)
        if not v > 0:
            raise ValueError(f"{name} parameter must be positive")
        return name, v
    raise ValueError("kernel must be green, mollified(eps) or indicator(R)")


def parse_potential(text: str):
    """Descriptor -> (name, args); the density itself is built once z and the kernel are known."""
    name, body = _call(text)
    args = _floats(body) if name != "trigonometric" else [tuple(_floats(p, ":")) for p in body.split(",")]
    if name == "quadratic" and not args:
        return name, ()
    if name in ("hard_wall", "trigger", "cosine") and len(args) == 1:
        if name != "cosine" and not args[0] > 0:
            raise ValueError(f"{name} level must be positive")
        return name, tuple(args)
    if name == "renormalized_cosine" and len(args) in (1, 2):
        return name, tuple(args)
    if name == "trigonometric" and args and all(len(a) == 2 for a in args):
        return name, tuple(args)
    raise ValueError("potential must be hard_wall(theta), trigger(level), quadratic, cosine(alpha), "
                     "trigonometric(w:alpha, ...) or renormalized_cosine(alpha[, N])")


def parse_t_grid(text: str):
    """'auto', 'linspace(a, b, n)' or an explicit comma list."""
    text = text.strip()
    if text == "auto":
        return None
    if text.startswith("linspace"):
        _, body = _call(text)
        a, b, n = _floats(body)
        if int(n) != n or n < 1:
            raise ValueError("linspace count must be a positive integer")
        return tuple(np.linspace(a, b, int(n)))
    t = tuple(_floats(text))
    if not t or not all(math.isfinite(v) for v in t):
        raise ValueError("t grid must be a non-empty list of finite reals")
    return t


def _positive(v):
    if not (v > 0 and math.isfinite(v)):
        raise ValueError("must be positive and finite")
    return v


def _nonneg(v):
    if not (v >= 0 and math.isfinite(v)):
        raise ValueError("must be >= 0 and finite")
    return v


def _int(lo: int = 0, hi: Optional[int] = None):
    def parse(text):
        v = int(text)
        if v < lo or (hi is not None and v > hi):
            raise ValueError(f"must be an integer in [{lo}, {hi if hi is not None else 'inf'}]")
        return v
    return parse


def _real(check=None):
    def parse(text):
        v = float(text)
        return check(v) if check else v
    return parse


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text
    return parse


def _z_list(text):
    z = _floats(text)
    if not z or any(not (v > 0 and math.isfinite(v)) for v in z):
        raise ValueError("must be positive and finite")
    if any(b <= a for a, b in zip(z, z[1:])):
        raise ValueError("must be strictly increasing")
    return tuple(z)


def _mix(text):
    p = _floats(text)
    if len(p) != 4 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-12:
        raise ValueError("needs 4 nonnegative probabilities summing to 1 (insert, delete, displace, recharge)")
    if (p[0] == 0) != (p[1] == 0):
        raise ValueError("insert and delete must both be enabled or both disabled")
    return tuple(p)


def _law(text):
    from .noise import ChargeLaw

    return ChargeLaw.parse(text)


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]
    kinds: tuple
    required: tuple = ()
    default: Any = None
    doc: str = ""


_ALL = KINDS
_BOXED = ("noise-sample", "field-sample", "gce", "ecf-sweep", "triviality", "expansion")
_MASSIVE = ("kernel-table", "field-sample", "gce", "ecf-sweep", "blockspin", "triviality", "expansion")

SCHEMA: dict[str, Key] = {
    "kind": Key("experiment", _choice(*KINDS), _ALL, _ALL, doc="experiment kind"),
    "seed": Key("experiment", _int(0, 2 ** 64 - 1), _ALL, _ALL, doc="root seed of every random stream"),
    "samples": Key("experiment", _int(0), ("noise-sample", "field-sample", "ecf-sweep", "triviality", "expansion"),
                   ("noise-sample", "field-sample", "ecf-sweep", "triviality"), 0,
                   "Monte Carlo samples (per z for sweeps)"),
    "steps": Key("experiment", _int(1), ("gce",), ("gce",), doc="Metropolis steps"),
    "burn_in": Key("experiment", _int(0), ("gce",), (), 0, "discarded leading steps"),
    "thinning": Key("experiment", _int(1), ("gce",), (), 1, "record every k-th step"),
    "n_max": Key("experiment", _int(0), ("gce",), (), None, "particle cap of the exact oracle"),
    "oracle_cells": Key("experiment", _int(2), ("gce",), (), 24, "oracle grid cells per axis"),
    "d": Key("model", _int(2), ("kernel-table", "blockspin"), ("kernel-table",), None, "dimension"),
    "m": Key("model", _real(_positive), _MASSIVE, (), 1.0, "mass"),
    "box": Key("model", parse_box, _BOXED, _BOXED, doc="lo:hi per axis"),
    "z": Key("model", _real(_positive), ("noise-sample", "field-sample", "gce", "expansion"),
             ("noise-sample", "field-sample", "gce", "expansion"), doc="activity"),
    "z_list": Key("model", _z_list, ("ecf-sweep", "blockspin", "triviality"),
                  ("ecf-sweep", "blockspin", "triviality"), doc="strictly increasing activities"),
    "lambda": Key("model", _real(_nonneg), ("gce",), ("gce",), doc="coupling"),
    "law": Key("model", _law, ("noise-sample", "field-sample", "gce", "ecf-sweep", "blockspin",
                               "triviality", "expansion"), (), "two_point_symmetric(1.0)", "charge law"),
    "kernel": Key("model", parse_kernel, ("kernel-table", "gce"), (), "green",
                  "green, mollified(eps) or indicator(R)"),
    "potential": Key("model", parse_potential, ("gce", "expansion"), ("gce", "expansion"),
                     doc="energy density descriptor"),
    "epsilon": Key("model", _real(_positive), ("expansion",), ("expansion",), doc="mollifier width"),
    "alpha": Key("model", _real(_positive), ("triviality",), ("triviality",), doc="cosine frequency"),
    "mix": Key("model", _mix, ("gce",), (), "0.3,0.3,0.3,0.1", "move probabilities"),
    "sigma_disp": Key("model", _real(_positive), ("gce",), (), None, "displacement scale"),
    "f": Key("probe", parse_test_function, ("noise-sample", "field-sample", "ecf-sweep", "blockspin", "expansion"),
             ("noise-sample", "field-sample", "ecf-sweep", "blockspin", "expansion"), doc="test function"),
    "t_grid": Key("probe", parse_t_grid, ("noise-sample", "field-sample", "ecf-sweep", "blockspin", "expansion"),
                  (), "auto", "auto, linspace(a, b, n) or a list"),
    "target": Key("probe", _choice("noise", "field"), ("ecf-sweep",), (), "noise", "sweep target"),
    "order": Key("probe", _int(0, 2), ("expansion",), (), 1, "expansion order n"),
    "model": Key("probe", _choice("poisson", "gaussian"), ("expansion",), (), "poisson", "expansion model"),
    "pad": Key("probe", _real(_nonneg), ("field-sample", "triviality"), (), None,
               "particle box padding in units of 1/m"),
    "grid": Key("probe", _int(1), ("triviality",), (), 8, "midpoint cells per axis"),
    "r_min": Key("table", _real(_positive), ("kernel-table",), (), 1e-3, "first radius"),
    "r_max": Key("table", _real(_positive), ("kernel-table",), (), 20.0, "last radius"),
    "n_points": Key("table", _int(16), ("kernel-table",), (), 64, "tabulated radii"),
}

SECTIONS = ("experiment", "model", "probe", "table")


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None


def _read(text: str) -> tuple[dict, list]:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        return {}, [("config", f"unreadable: {exc.message if hasattr(exc, 'message') else exc}")]
    raw, errors = {}, []
    for section in cp.sections():
        if section not in SECTIONS:
            errors.append((section, f"unknown section; expected one of {', '.join(SECTIONS)}"))
            continue
        for key, value in cp.items(section):
            spec = SCHEMA.get(key)
            if spec is None:
                errors.append((key, "unknown key"))
            elif spec.section != section:
                errors.append((key, f"belongs in section [{spec.section}], found in [{section}]"))
            else:
                raw[key] = value
    return raw, errors


def _cross_check(kind: str, v: dict) -> list[tuple[str, str]]:
    from .noise import GaussianBump

    errors = []
    box = v.get("box")
    d = box.d if box is not None else v.get("d")
    if box is not None and d < 2 and kind != "noise-sample":
        errors.append(("box", "field kernels need dimension >= 2"))
    f = v.get("f")
    if f is not None and d is not None:
        for t in f.terms():
            dim = len(t.center) if isinstance(t, GaussianBump) else t.box.d
            if dim != d:
                errors.append(("f", f"term has dimension {dim}, expected {d}"))
                break
    if kind == "blockspin":
        if v.get("d") is None and f is not None and f.terms():
            t0 = f.terms()[0]
            v["d"] = len(t0.center) if isinstance(t0, GaussianBump) else t0.box.d
        if f is not None and not (f.terms() and all(isinstance(t, GaussianBump) for t in f.terms())):
            errors.append(("f", "block-spin check needs a sum of Gaussian bumps"))
    if kind == "kernel-table":
        if not v["r_min"] < v["r_max"]:
            errors.append(("r_max", "must exceed r_min"))
        if v["kernel"][0] == "indicator":
            errors.append(("kernel", "kernel-table tabulates green or mollified(eps)"))
    if kind == "gce":
        if not v["steps"] > v["burn_in"]:
            errors.append(("burn_in", "must be smaller than steps"))
        name = v["potential"][0]
        if name == "quadratic" and v["kernel"][0] == "green":
            errors.append(("potential", "quadratic density needs a mollified or indicator kernel"))
        if v.get("n_max") is not None and v["lambda"] > 0 and not (
                v["kernel"][0] == "indicator" and name == "hard_wall"):
            errors.append(("n_max", "the oracle supports lambda = 0 or hard spheres only"))
    if kind == "expansion" and v["potential"][0] not in ("cosine", "trigonometric", "renormalized_cosine"):
        errors.append(("potential", "expansion needs cosine, trigonometric or renormalized_cosine"))
    if kind == "ecf-sweep" and abs(v["law"].mean) > 1e-12:
        errors.append(("law", "the CLT sweep needs a centred law (E[S] = 0)"))
    if kind == "triviality" and not v["law"].symmetric:
        errors.append(("law", "the triviality curve needs a symmetric law"))
    if kind in ("ecf-sweep", "noise-sample", "field-sample") and v["samples"] < 100:
        errors.append(("samples", "must be >= 100"))
    if kind == "triviality" and v["samples"] == 1:
        errors.append(("samples", "must be 0 or >= 2"))
    return errors


def load_config(text: str) -> tuple[Optional[ExperimentConfig], list[tuple[str, str]]]:
    raw, errors = _read(text)
    kind = raw.get("kind")
    if kind is None:
        errors.append(("kind", "missing required key"))
    elif kind not in KINDS:
        errors.append(("kind", f"must be one of {', '.join(KINDS)}"))
        kind = None
    values = {}
    for key, spec in SCHEMA.items():
        if kind is not None and key in raw and kind not in spec.kinds:
            errors.append((key, f"not used by kind {kind}"))
            continue
        if key not in raw:
            if key == "seed" or (kind is not None and kind in spec.required):
                errors.append((key, "missing required key"))
            elif kind is not None and kind in spec.kinds and spec.default is not None:
                values[key] = spec.parse(str(spec.default))
            elif kind is not None and kind in spec.kinds:
                values[key] = None
            continue
        try:
            values[key] = spec.parse(raw[key].strip())
        except (ValueError, TypeError, ArithmeticError) as exc:
            errors.append((key, f"invalid value {raw[key].strip()!r}: {exc}"))
    if errors or kind is None:
        return None, errors
    errors = _cross_check(kind, values)
    if errors:
        return None, errors
    return ExperimentConfig(kind, values.pop("seed"), {k: v for k, v in values.items() if k != "kind"}), []


def validate_config(text: str) -> list[tuple[str, str]]:
    """Empty list when the config is valid, else (field, message) pairs."""
    return load_config(text)[1]


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    s = str(v)
    if not s or any(c.isspace() for c in s):
        raise ValueError(f"record value {s!r} is empty or contains whitespace")
    return s


def emit_record(rec: dict) -> str:
    return " ".join(f"{k}={format_value(v)}" for k, v in rec.items())


def parse_record(line: str) -> dict[str, str]:
    out = {}
    for tok in line.split():
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ValueError(f"malformed token {tok!r}")
        out[key] = value
    return out


def record_floats(rec: dict[str, str]) -> dict:
    """Typed view of a parsed record: numbers become float, everything else stays text."""
    out = {}
    for k, v in rec.items():
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    status: int
    records: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    error: str = ""


def _map(fn, items, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _params(cfg: ExperimentConfig, d: Optional[int] = None):
    from .kernel import KernelParams

    return KernelParams(d if d is not None else cfg.box.d, cfg.m)


def _kernel(cfg: ExperimentConfig):
    from .kernel import MollifiedKernel, MollifierParams
    from .potential import IndicatorKernel

    name, v = cfg.kernel
    if name == "indicator":
        return IndicatorKernel(v)
    params = _params(cfg)
    return params if name == "green" else MollifiedKernel(params, MollifierParams(v))


def _potential(cfg: ExperimentConfig, kernel, z: float):
    from .potential import HardWall, Quadratic, RenormalizedCosine, Trigger, Trigonometric, renorm_normalizer

    name, args = cfg.potential
    if name == "hard_wall":
        return HardWall(args[0])
    if name == "trigger":
        return Trigger(args[0])
    if name == "quadratic":
        return Quadratic()
    if name == "cosine":
        return Trigonometric(((1.0, args[0]),))
    if name == "trigonometric":
        return Trigonometric(args)
    norm = args[1] if len(args) == 2 else renorm_normalizer(z, args[0], cfg.law, kernel)
    return RenormalizedCosine(args[0], norm)


def _t_grid(cfg: ExperimentConfig, sd: float):
    from .scaling import default_t_grid

    return np.asarray(cfg.t_grid) if cfg.t_grid is not None else default_t_grid(sd)


def _run_kernel_table(cfg, workers):
    from .kernel import (KernelParams, MollifierParams, build_mollified_table, build_table,
                         green_evaluate, green_mollified)

    params = KernelParams(cfg.d, cfg.m)
    name, eps = cfg.kernel
    if name == "green":
        table = build_table(params, cfg.r_min, cfg.r_max, cfg.n_points)
        exact = lambda r: green_evaluate(params, r)  # noqa: E731
    else:
        moll = MollifierParams(eps)
        table = build_mollified_table(params, moll, cfg.r_max, cfg.n_points)
        exact = lambda r: green_mollified(params, moll, r)  # noqa: E731
    # a third of the way between nodes, which stays off-node if the table densifies
    u = np.linspace(math.log(cfg.r_min), math.log(cfg.r_max), cfg.n_points)
    radii = np.exp((2.0 * u[:-1] + u[1:]) / 3.0)
    got, ref = table(radii), exact(radii)
    recs = [dict(experiment="kernel-table", record=i, d=cfg.d, m=cfg.m, kernel=name, r=r,
                 estimate=g, stderr=0.0, samples=0, analytic=a, rel_error=abs(g - a) / a)
            for i, (r, g, a) in enumerate(zip(radii, got, ref))]
    worst = max(rec["rel_error"] for rec in recs)
    return recs, [f"kernel-table: {len(recs)} radii, max relative error {worst:.3g}"]


def _ecf_records(kind, t, x, cf, start: int, extra: dict):
    from .stats import ecf_estimate, ecf_stderr

    est, _ = ecf_estimate(x, t)
    se = ecf_stderr(x, t)
    return [dict(experiment=kind, record=start + i, **extra, observable="cf", t=ti,
                 estimate_re=e.real, estimate_im=e.imag, stderr=s, samples=x.size,
                 analytic_re=a.real, analytic_im=a.imag)
            for i, (ti, e, s, a) in enumerate(zip(t, est, se, cf))]


def _moment_records(kind, x, mean, var, extra):
    n = x.size
    dev = x - x.mean()
    v = float(np.var(x, ddof=1))
    var_se = math.sqrt(max(float(np.mean(dev ** 4)) - v * v, 0.0) / n)
    return [
        dict(experiment=kind, record=0, **extra, observable="mean", estimate=float(x.mean()),
             stderr=float(x.std(ddof=1) / math.sqrt(n)), samples=n, analytic=mean),
        dict(experiment=kind, record=1, **extra, observable="variance", estimate=v,
             stderr=var_se, samples=n, analytic=var),
    ]


def _band_summary(kind, recs):
    moments = [r for r in recs if r["observable"] in ("mean", "variance")]
    out = [f"{kind}: {r['observable']} {r['estimate']:.6g} +- {r['stderr']:.2g} "
           f"(analytic {r['analytic']:.6g})" for r in moments]
    cf = [r for r in recs if r["observable"] == "cf"]
    worst = max(abs(complex(r["estimate_re"], r["estimate_im"]) - complex(r["analytic_re"], r["analytic_im"]))
                / max(r["stderr"], 1e-300) for r in cf if r["stderr"] > 0) if cf else 0.0
    out.append(f"{kind}: {len(cf)} CF points, worst deviation {worst:.2f} stderr")
    return out


def _run_noise_sample(cfg, workers):
    from .noise import campbell_moments, noise_char_analytic, sample_pairings
    from .stats import RngStream

    law = cfg.law
    x = sample_pairings(cfg.box, cfg.z, law, cfg.f, RngStream(cfg.seed), cfg.samples)
    mean, var = campbell_moments(cfg.box, cfg.z, law, cfg.f)
    t = _t_grid(cfg, math.sqrt(var) if var > 0 else 1.0)
    extra = dict(z=cfg.z, law=law.describe())
    recs = _moment_records("noise-sample", x, mean, var, extra)
    recs += _ecf_records("noise-sample", t, x, noise_char_analytic(cfg.box, cfg.z, law, cfg.f, t), 2, extra)
    return recs, _band_summary("noise-sample", recs)


def _run_field_sample(cfg, workers):
    from .field import field_char_analytic, free_covariance, green_convolve, sample_field_pairings
    from .quadrature import integrate_box
    from .stats import RngStream

    law, params = cfg.law, _params(cfg)
    pbox = cfg.box.padded(cfg.pad / cfg.m) if cfg.pad else cfg.box
    x = sample_field_pairings(pbox, cfg.z, law, params, cfg.f, RngStream(cfg.seed), cfg.samples)
    var = free_covariance(params, cfg.f, cfg.f, cfg.z, law, pbox)
    mean = 0.0
    if law.mean != 0:
        mean = cfg.z * law.mean * float(integrate_box(lambda p: green_convolve(cfg.f, params, p),
                                                      pbox.lower, pbox.upper, tol=1e-9))
    t = _t_grid(cfg, math.sqrt(var) if var > 0 else 1.0)
    extra = dict(z=cfg.z, m=cfg.m, law=law.describe())
    recs = _moment_records("field-sample", x, mean, var, extra)
    cf = field_char_analytic(pbox, cfg.z, law, params, cfg.f, t)
    recs += _ecf_records("field-sample", t, x, cf, 2, extra)
    return recs, _band_summary("field-sample", recs)


def _run_gce(cfg, workers):
    from .gce import GCEConfig, brute_force_gce, run_chain

    kernel = _kernel(cfg)
    gce = GCEConfig(cfg.box, cfg.z, cfg.values["lambda"], cfg.law, kernel, _potential(cfg, kernel, cfg.z),
                    mix=cfg.mix, sigma_disp=cfg.sigma_disp, steps=cfg.steps, burn_in=cfg.burn_in,
                    thinning=cfg.thinning, seed=cfg.seed)
    res = run_chain(gce, ("N", "N2"))
    analytic, bound = math.nan, math.nan
    if gce.coupling == 0:
        analytic, bound = gce.mean_count, 0.0
    elif cfg.n_max is not None:
        analytic, bound = brute_force_gce(gce, cfg.n_max, "N", cells=cfg.oracle_cells)
    extra = dict(z=cfg.z, coupling=gce.coupling, law=cfg.law.describe())
    recs = []
    for i, name in enumerate(("N", "N2")):
        est, se = res.summaries[name]
        rec = dict(experiment="gce", record=i, **extra, observable=name, estimate=est, stderr=se,
                   samples=res.samples)
        if name == "N":
            rec.update(analytic=analytic, truncation_bound=bound)
        recs.append(rec)
    acc = res.acceptance()
    for j, move in enumerate(sorted(acc)):
        recs.append(dict(experiment="gce", record=2 + j, **extra, observable=f"accept_{move}",
                         estimate=acc[move], samples=res.state.proposed[move]))
    est, se = res.summaries["N"]
    return recs, [f"gce: E[N] = {est:.6g} +- {se:.2g} over {res.samples} samples "
                  f"(reference {analytic:.6g}, bound {bound:.3g})"]


def _run_ecf_sweep(cfg, workers):
    from .scaling import ScalingSweepSpec, sweep_point

    params = _params(cfg) if cfg.target == "field" else None
    spec = ScalingSweepSpec(cfg.z_list, cfg.target, cfg.f, cfg.t_grid, cfg.samples, cfg.seed)
    points = _map(partial(sweep_point, spec, box=cfg.box, law=cfg.law, kernel=params),
                  range(len(cfg.z_list)), workers)
    recs, summary = [], []
    for p in points:
        for ti, e, s, a, x in zip(p.t, p.ecf, p.stderr, p.limit, p.exact):
            recs.append(dict(experiment="ecf-sweep", record=len(recs), target=cfg.target, z=p.z, t=ti,
                             estimate_re=e.real, estimate_im=e.imag, stderr=s, samples=cfg.samples,
                             analytic_re=a.real, analytic_im=a.imag, exact_re=x.real, exact_im=x.imag))
        summary.append(f"ecf-sweep: z={p.z:.6g} D={p.distance:.4g} +- {p.distance_stderr:.2g} "
                       f"(exact {p.exact_distance:.4g})")
    return recs, summary


def _blockspin_point(z, params, f, t, law):
    from .scaling import blockspin_identity_check

    return blockspin_identity_check(z, params, f, t, law)


def _run_blockspin(cfg, workers):
    from .field import green_inner

    params = _params(cfg, cfg.d)
    sd = math.sqrt(cfg.law.second_moment * green_inner(params, cfg.f, cfg.f))
    t = _t_grid(cfg, sd)
    out = _map(partial(_blockspin_point, params=params, f=cfg.f, t=t, law=cfg.law), cfg.z_list, workers)
    recs = [dict(experiment="blockspin", record=i, d=params.d, m=params.m, z=z, alpha=z ** (1.0 / params.d),
                 law=cfg.law.describe(), observable="discrepancy", estimate=v, stderr=0.0, samples=0,
                 analytic=0.0) for i, (z, v) in enumerate(zip(cfg.z_list, out))]
    return recs, [f"blockspin: max exponent discrepancy {max(out):.3g} over {len(out)} z values"]


def _run_triviality(cfg, workers):
    params = _params(cfg)
    pad = 6.0 if cfg.pad is None else cfg.pad
    fn = partial(_triviality_task, alpha=cfg.alpha, law=cfg.law, kernel=params, box=cfg.box,
                 samples=cfg.samples, seed=cfg.seed, pad=pad, grid=cfg.grid)
    rows = _map(fn, list(enumerate(cfg.z_list)), workers)
    recs = [dict(experiment="triviality", record=i, z=r.z, alpha=cfg.alpha, law=cfg.law.describe(),
                 observable="center_cos", estimate=r.center_mean, stderr=r.center_stderr, samples=r.samples,
                 analytic=r.normalizer, box_mean=r.box_mean, box_var=r.box_var,
                 box_var_stderr=r.box_var_stderr, boundary_deviation=r.boundary_deviation)
            for i, r in enumerate(rows)]
    return recs, [f"triviality: z={r.z:.6g} N={r.normalizer:.6g} centre MC {r.center_mean:.6g} "
                  f"+- {r.center_stderr:.2g}" for r in rows]


def _triviality_task(item, **kw):
    from .scaling import triviality_point

    k, z = item
    return triviality_point(z, k, **kw)


def _expansion_task(t, order, f, eps, model, spec, box, params, law, z):
    from .scaling import perturbative_coefficient

    return complex(perturbative_coefficient(order, np.array([t]), f, eps, model, spec, box,
                                            params, law, z)[0])


def _run_expansion(cfg, workers):
    from .field import field_char_analytic, green_inner
    from .kernel import MollifiedKernel, MollifierParams
    from .scaling import ExpansionQuad, first_order_mc
    from .stats import RngStream

    params, law = _params(cfg), cfg.law
    spec = _potential(cfg, MollifiedKernel(params, MollifierParams(cfg.epsilon)), cfg.z)
    qff = green_inner(params, cfg.f, cfg.f) if cfg.f.terms() else 0.0
    var = law.second_moment * qff
    t = _t_grid(cfg, math.sqrt(var) if var > 0 else 1.0)
    vals = _map(partial(_expansion_task, order=cfg.order, f=cfg.f, eps=cfg.epsilon, model=cfg.model,
                        spec=spec, box=cfg.box, params=params, law=law, z=cfg.z), t, workers)
    if cfg.order == 0:
        if cfg.model == "gaussian":
            ref = np.exp(-0.5 * var * t * t)
        else:
            outer = cfg.box.padded(ExpansionQuad().pad / params.m)
            ref = field_char_analytic(outer, cfg.z, law, params, cfg.f, t, rescaled=True)
    else:
        ref = np.full(t.shape, math.nan)
    mc = se = None
    if cfg.order == 1 and cfg.samples > 0:
        mc, se = first_order_mc(t, cfg.f, cfg.epsilon, spec, cfg.box, params, law, cfg.z,
                                cfg.samples, RngStream(cfg.seed))
    recs = []
    for i, (ti, v, a) in enumerate(zip(t, vals, ref)):
        rec = dict(experiment="expansion", record=i, model=cfg.model, order=cfg.order, z=cfg.z,
                   epsilon=cfg.epsilon, t=ti, estimate_re=v.real, estimate_im=v.imag, stderr=0.0,
                   samples=0, analytic_re=complex(a).real, analytic_im=complex(a).imag)
        if mc is not None:
            rec.update(mc_re=mc[i].real, mc_im=mc[i].imag, mc_stderr=se[i], mc_samples=cfg.samples)
        recs.append(rec)
    return recs, [f"expansion: A_{cfg.order} ({cfg.model}) at {len(t)} t values"]


RUNNERS = {
    "kernel-table": _run_kernel_table,
    "noise-sample": _run_noise_sample,
    "field-sample": _run_field_sample,
    "gce": _run_gce,
    "ecf-sweep": _run_ecf_sweep,
    "blockspin": _run_blockspin,
    "triviality": _run_triviality,
    "expansion": _run_expansion,
}


def run_experiment(config, workers: int = 1) -> RunResult:
    """Run a config (text or :class:`ExperimentConfig`); never raises on bad input."""
    if isinstance(config, str):
        config, errors = load_config(config)
        if errors:
            return RunResult(2, error="; ".join(f"{k}: {m}" for k, m in errors))
    try:
        recs, summary = RUNNERS[config.kind](config, workers)
    except Exception as exc:  # module errors become a diagnostic
        log.debug("experiment failed", exc_info=True)
        return RunResult(1, error=f"{type(exc).__name__}: {exc}")
    return RunResult(0, recs, summary)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cpnlab", description="Run a convoluted Poisson noise experiment.")
    ap.add_argument("--config", required=True, help="INI experiment config")
    ap.add_argument("--output", default="-", help="record file (default: stdout)")
    ap.add_argument("--workers", type=int, default=1, help="worker processes (output is unaffected)")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    ap.add_argument("--check", action="store_true", help="validate the config and exit")
    args = ap.parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    errors = validate_config(text)
    if errors:
        for key, msg in errors:
            print(f"config error: {key}: {msg}", file=sys.stderr)
        return 2
    if args.check:
        print("config ok", file=sys.stderr)
        return 0
    log.info("running %s with %d worker(s)", load_config(text)[0].kind, args.workers)
    res = run_experiment(text, args.workers)
    if res.status:
        print(f"error: {res.error}", file=sys.stderr)
        return res.status
    lines = "".join(emit_record(r) + "\n" for r in res.records)
    if args.output == "-":
        sys.stdout.write(lines)
    else:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(lines)
    for line in res.summary:
        print(line, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
