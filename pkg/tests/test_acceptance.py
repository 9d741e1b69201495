"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (collected again in the terminal summary)
and then asserts.  Run alone with

    python3 -m pytest tests/test_acceptance.py -v
"""

import io
import math

import numpy as np
import pytest
from scipy import stats

from cpnlab.cli import emit_record, run_experiment
from cpnlab.field import field_char_analytic, green_inner, sample_field_pairings
from cpnlab.gce import GCEConfig, brute_force_gce, log_flow, run_chain
from cpnlab.kernel import KernelParams, green_evaluate, green_fourier_quadrature
from cpnlab.noise import (Box, ChargeConfiguration, ChargeLaw, FiniteSum, GaussianBump, campbell_moments,
                          noise_char_analytic, sample_pairings)
from cpnlab.potential import (HardWall, IndicatorKernel, InteractionDomain, Move, RenormalizedCosine,
                              Trigonometric, apply_move, interaction_energy, renorm_normalizer)
from cpnlab.scaling import (ScalingSweepSpec, analytic_sweep, blockspin_identity_check, default_t_grid,
                            ecf_convergence_sweep, first_order_mc, limit_variance, perturbative_coefficient,
                            triviality_point)
from cpnlab.stats import RngStream, ecf_estimate, ecf_stderr

SYM = ChargeLaw.two_point_symmetric(1.0)
BOX4 = Box((0.0, 0.0), (4.0, 4.0))
BUMP4 = GaussianBump((2.0, 2.0), 0.5)
P2 = KernelParams(2, 1.0)


def test_01_kernel_matches_fourier_inversion(report):
    worst = 0.0
    for d in (2, 3, 4):
        for m in (0.5, 1.0, 2.0):
            p = KernelParams(d, m)
            for r in np.geomspace(0.1 / m, 10.0 / m, 20):
                ref = green_fourier_quadrature(p, r)
                worst = max(worst, abs(green_evaluate(p, r) / ref - 1.0))
    r = np.geomspace(0.01, 20.0, 50)
    forms = 0.0
    for m in (0.5, 1.0, 2.0):
        d2 = np.exp(-m * r) / (2 * math.pi * r)
        d4 = np.exp(-m * r) * (1 + m * r) / (4 * math.pi ** 2 * r ** 3)
        forms = max(forms, np.max(np.abs(green_evaluate(KernelParams(2, m), r) / d2 - 1)),
                    np.max(np.abs(green_evaluate(KernelParams(4, m), r) / d4 - 1)))
    ok = worst < 1e-4 and forms < 1e-12
    report("1 kernel correctness", ok,
           f"max rel err vs Fourier {worst:.2e} (< 1e-4); elementary d=2,4 forms {forms:.2e}")
    assert ok


def test_02_kernel_asymptotics(report):
    origin_err = tail_err = raw_err = 0.0
    for d in (2, 3, 4):
        for m in (0.5, 1.0, 2.0):
            p = KernelParams(d, m)
            r = np.geomspace(1e-3 / m, 1e-2 / m, 30)
            slope = np.polyfit(np.log(r), np.log(green_evaluate(p, r)), 1)[0]
            origin_err = max(origin_err, abs(slope / (1 - d) - 1))
            r = np.linspace(8.0 / m, 12.0 / m, 30)
            g = np.log(green_evaluate(p, r))
            # the exponential rate, with the algebraic r^(-d/2) prefactor divided out
            rate = np.polyfit(r, g + 0.5 * d * np.log(r), 1)[0]
            raw = np.polyfit(r, g, 1)[0]
            tail_err = max(tail_err, abs(rate / -m - 1))
            raw_err = max(raw_err, abs(raw / -m - 1))
    ok = origin_err < 0.02 and tail_err < 0.02
    report("2 kernel asymptotics", ok,
           f"near-origin exponent rel err {origin_err:.2e}; tail rate rel err {tail_err:.2e} "
           f"(raw log-slope without prefactor: {raw_err:.2e}); bound 2%")
    assert ok


def test_03_campbell_moments(report):
    n = 100_000
    x = sample_pairings(BOX4, 2.0, SYM, BUMP4, RngStream(301), n)
    mean, var = campbell_moments(BOX4, 2.0, SYM, BUMP4)
    m_hat, v_hat = float(x.mean()), float(x.var(ddof=1))
    se_mean = math.sqrt(v_hat / n)
    dev = x - m_hat
    se_var = math.sqrt((np.mean(dev ** 4) - v_hat ** 2) / n)
    z_mean, z_var = abs(m_hat - mean) / se_mean, abs(v_hat - var) / se_var
    ok = z_mean < 3 and z_var < 3
    report("3 Campbell moments", ok,
           f"mean {m_hat:.5f} vs {mean:.5f} ({z_mean:.2f} sigma); "
           f"variance {v_hat:.5f} vs {var:.5f} ({z_var:.2f} sigma)")
    assert ok


def test_04_characteristic_functions(report):
    n = 100_000
    t = default_t_grid(math.sqrt(campbell_moments(BOX4, 2.0, SYM, BUMP4)[1]))
    x = sample_pairings(BOX4, 2.0, SYM, BUMP4, RngStream(401), n)
    noise_dev = np.abs(ecf_estimate(x, t)[0] - noise_char_analytic(BOX4, 2.0, SYM, BUMP4, t)) / \
        np.maximum(ecf_stderr(x, t), 1e-300)
    var_field = 2.0 * green_inner(P2, BUMP4, BUMP4, BOX4)
    t_f = default_t_grid(math.sqrt(var_field))
    y = sample_field_pairings(BOX4, 2.0, SYM, P2, BUMP4, RngStream(402), n)
    field_dev = np.abs(ecf_estimate(y, t_f)[0] - field_char_analytic(BOX4, 2.0, SYM, P2, BUMP4, t_f)) / \
        np.maximum(ecf_stderr(y, t_f), 1e-300)
    # t = 0 is exact on both sides
    noise_dev[t == 0] = 0.0
    field_dev[t_f == 0] = 0.0
    ok = noise_dev.max() < 3 and field_dev.max() < 3
    report("4 analytic vs empirical CF", ok,
           f"worst |ECF - CF| / stderr over 21 t: noise {noise_dev.max():.2f}, field {field_dev.max():.2f} (< 3)")
    assert ok


GCE_FREE = """
[experiment]
kind = gce
seed = 501
steps = 200000
burn_in = 2000
thinning = 50

[model]
box = 0:2, 0:2
z = 1.5
lambda = 0
kernel = indicator(0.4)
potential = hard_wall(2)
"""


def test_05_gce_free_case(report):
    gce = GCEConfig(BOX4.scaled(0.5), 1.5, 0.0, SYM, IndicatorKernel(0.4), HardWall(2.0),
                    steps=200_000, burn_in=2_000, thinning=50, seed=501)
    res = run_chain(gce, ("N",))
    counts = res.series["N"].astype(int)
    mean = gce.mean_count
    top = 13
    observed = np.array([np.sum(counts == k) for k in range(top)] + [np.sum(counts >= top)])
    probs = np.append(stats.poisson.pmf(np.arange(top), mean), stats.poisson.sf(top - 1, mean))
    chi2 = float(np.sum((observed - counts.size * probs) ** 2 / (counts.size * probs)))
    p_value = float(stats.chi2.sf(chi2, probs.size - 1))
    est, se = res.summaries["N"]
    first = [emit_record(r) for r in run_experiment(GCE_FREE).records]
    second = [emit_record(r) for r in run_experiment(GCE_FREE).records]
    dumps = []
    for _ in range(2):
        buf = io.StringIO()
        run_chain(GCEConfig(gce.box, 1.5, 0.0, SYM, gce.kernel, gce.spec, steps=2000, thinning=100, seed=7),
                  stream=buf)
        dumps.append(buf.getvalue())
    identical = first == second and dumps[0] == dumps[1]
    ok = p_value > 0.01 and abs(est - mean) < 3 * se and identical
    report("5 GCE free case", ok,
           f"chi-square p = {p_value:.3f} (> 0.01); E[N] = {est:.4f} +- {se:.4f} vs {mean}; "
           f"reruns byte-identical: {identical}")
    assert ok


def test_06_gce_oracle_equivalence(report):
    gce = GCEConfig(Box((0.0, 0.0), (2.0, 2.0)), 0.5, 1.0, ChargeLaw.point_mass(1.0), IndicatorKernel(0.4),
                    HardWall(2.0), steps=200_000, burn_in=2_000, seed=601)
    res = run_chain(gce, ("N",))
    est, se = res.summaries["N"]
    coarse, _ = brute_force_gce(gce, 3, "N", cells=16)
    fine, bound = brute_force_gce(gce, 3, "N", cells=32)
    gap = abs(est - fine)
    ok = gap < 3 * se + bound and abs(coarse - fine) < 1e-3
    report("6 GCE oracle equivalence", ok,
           f"chain E[N] = {est:.4f} +- {se:.4f}; oracle {fine:.5f} (bound {bound:.1e}); "
           f"gap {gap:.4f} < {3 * se + bound:.4f}; oracle 16 vs 32 cells {abs(coarse - fine):.1e}")
    assert ok


def _reverse(config, move):
    if move.kind == "insert":
        return Move("delete", index=config.n)
    if move.kind == "delete":
        return Move("insert", position=tuple(config.positions[move.index]),
                    charge=float(config.charges[move.index]))
    return Move("recharge", index=move.index, charge=float(config.charges[move.index]))


def test_07_detailed_balance(report):
    box = Box((0.0, 0.0), (2.0, 2.0))
    domain = InteractionDomain(pad=5.0, h=0.25, phase_tol=8.0, cell_tol=1e-5, refine_levels=10)
    cases = [
        (GCEConfig(box, 1.5, 0.7, SYM, P2, Trigonometric(((1.0, 1.0),)), domain=domain,
                   mix=(0.35, 0.25, 0.2, 0.2)), SYM),
        (GCEConfig(box, 2.0, 1.0, ChargeLaw.point_mass(1.0), IndicatorKernel(0.3), HardWall(2.0)),
         ChargeLaw.point_mass(1.0)),
    ]
    rng = RngStream(701)
    worst, pairs = 0.0, 0
    for gce, law in cases:
        for _ in range(15):
            n = int(rng.integers(1, 4))
            eta = ChargeConfiguration(box, box.sample_uniform(rng, n), law.sample(rng, n))
            u = interaction_energy(eta, gce.kernel, gce.spec, gce.domain)
            if u == math.inf:
                continue
            moves = [Move("insert", position=tuple(box.sample_uniform(rng, 1)[0]),
                          charge=float(law.sample(rng, 1)[0])),
                     Move("delete", index=int(rng.integers(n))),
                     Move("recharge", index=int(rng.integers(n)), charge=float(law.sample(rng, 1)[0]))]
            for move in moves:
                new = apply_move(eta, move)
                u_new = interaction_energy(new, gce.kernel, gce.spec, gce.domain)
                if u_new == math.inf:
                    continue
                fwd = log_flow(gce, eta, move, u, u_new - u)
                back = log_flow(gce, new, _reverse(eta, move), u_new, u - u_new)
                worst = max(worst, abs(fwd - back))
                pairs += 1
    ok = worst < 1e-12 and pairs > 50
    report("7 detailed balance", ok, f"max |log flow forward - backward| = {worst:.1e} over {pairs} pairs")
    assert ok


def test_08_clt_scaling(report):
    box = Box((0.0, 0.0), (1.0, 1.0))
    f = GaussianBump((0.5, 0.5), 0.05)
    spec = ScalingSweepSpec((1.0, 10.0, 100.0, 1000.0), "noise", f, samples=100_000, seed=801)
    points = ecf_convergence_sweep(spec, box, SYM, exact=False)
    dist = [p.distance for p in points]
    se = [p.distance_stderr for p in points]
    gaps = [(a - b) / math.sqrt(sa ** 2 + sb ** 2) for a, b, sa, sb in zip(dist, dist[1:], se, se[1:])]
    sd = math.sqrt(limit_variance("noise", box, SYM, f))
    far = float(analytic_sweep([1e4], box, SYM, f, default_t_grid(sd))[0])
    ok = min(gaps) > 3 and far < 5e-3
    report("8 CLT scaling", ok,
           "D(z) = " + ", ".join(f"{d:.4f}" for d in dist)
           + f"; successive drops {', '.join(f'{g:.1f}' for g in gaps)} sigma (> 3); "
           f"analytic D(1e4) = {far:.1e} (< 5e-3)")
    assert ok


def test_09_blockspin_identity(report):
    f = FiniteSum((GaussianBump((0.0, 0.0), 0.3), GaussianBump((0.4, -0.2), 0.2, -0.5)))
    t = np.linspace(-3.0, 3.0, 7)
    laws = [SYM, ChargeLaw.discrete([(-1.0, 0.25), (0.5, 0.25), (2.0, 0.5)])]
    worst = max(blockspin_identity_check(z, P2, f, t, law) for z in (4.0, 16.0) for law in laws)
    ok = worst < 1e-6
    report("9 block-spin identity", ok, f"max exponent discrepancy {worst:.1e} (< 1e-6)")
    assert ok


def test_10_triviality(report):
    zs = [1.0, 10.0, 100.0, 1000.0, 1e4]
    n = [renorm_normalizer(z, 5.0, SYM, P2) for z in zs]
    decreasing = all(b < a for a, b in zip(n, n[1:])) and n[-1] < n[0] / 2
    box = Box((0.0, 0.0), (1.0, 1.0))
    devs = []
    for k, z in enumerate(zs[:2]):
        rec = triviality_point(z, k, 5.0, SYM, P2, box, 4000, seed=1001, grid=2)
        devs.append(abs(rec.center_mean - rec.normalizer) / rec.center_stderr)
    ok = decreasing and max(devs) < 3
    report("10 triviality", ok,
           "N(z) = " + ", ".join(f"{v:.4g}" for v in n)
           + f"; strictly decreasing and N(1e4) < N(1)/2: {decreasing}; "
           f"MC centre vs N at z=1, 10: {devs[0]:.2f}, {devs[1]:.2f} sigma")
    assert ok


def test_11_perturbative_convergence(report):
    box = Box((0.0, 0.0), (1.0, 1.0))
    f = GaussianBump((0.5, 0.5), 0.3)
    v = Trigonometric(((1.0, 1.0),))
    t = np.array([-1.0, 0.0, 1.0])
    z, eps = 1e3, 0.5
    gauss = perturbative_coefficient(1, t, f, eps, "gaussian", v, box, P2)
    poisson = perturbative_coefficient(1, t, f, eps, "poisson", v, box, P2, SYM, z=z)
    mc, se = first_order_mc(t, f, eps, v, box, P2, SYM, z, 1000, RngStream(1101))
    quad_gap = float(np.max(np.abs(poisson - gauss)))
    mc_ratio = float(np.max(np.abs(mc - gauss) / (3 * se + 1e-3)))
    bare = np.exp(-0.5 * SYM.second_moment * green_inner(P2, f, f) * t * t)
    a0 = perturbative_coefficient(0, t, f, eps, "gaussian", v, box, P2)
    p0 = perturbative_coefficient(0, t, f, eps, "poisson", v, box, P2, SYM, z=z)
    outer = box.padded(10.0)
    exact0 = field_char_analytic(outer, z, SYM, P2, f, t, rescaled=True)
    zeroth = max(float(np.max(np.abs(a0 - bare))), float(np.max(np.abs(p0 - exact0))))
    ok = quad_gap < 1e-3 and mc_ratio < 1 and zeroth < 1e-6
    report("11 perturbative convergence", ok,
           f"A_1 Poisson quadrature vs Gaussian {quad_gap:.1e} (< 1e-3); "
           f"MC |dev| / (3 sigma + 1e-3) = {mc_ratio:.2f} (< 1); A_0 vs bare CF {zeroth:.1e}")
    assert ok


def test_12_renormalizer_linearity(report):
    empty = FiniteSum(())
    box = Box((0.0, 0.0), (1.0, 1.0))
    alpha, eps = 5.0, 0.5
    worst = 0.0
    for z in (10.0, 1000.0):
        n_z = renorm_normalizer(z, alpha, SYM, P2)
        for model in ("gaussian", "poisson"):
            trig = perturbative_coefficient(1, 0.0, empty, eps, model, Trigonometric(((1.0, alpha),)), box, P2,
                                            SYM, z=z)
            ren = perturbative_coefficient(1, 0.0, empty, eps, model, RenormalizedCosine(alpha, n_z), box, P2,
                                           SYM, z=z)
            worst = max(worst, abs(ren / trig * n_z - 1.0))
    ok = worst < 1e-12
    report("12 renormalizer linearity", ok, f"max |A_1(renormalized) N(z) / A_1(cos) - 1| = {worst:.1e}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
