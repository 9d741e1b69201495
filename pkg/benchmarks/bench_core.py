"""Time the compiled core against the numpy fallback.

    python3 benchmarks/bench_core.py [--repeat 5] [--scale 1.0]

Each kernel is run on identical inputs through both backends; the script
checks the outputs agree before reporting timings.
"""

import argparse
import timeit

import numpy as np

from cpnlab._backend import BACKENDS
from cpnlab.kernel import default_table


def cases(scale: float):
    rng = np.random.default_rng(0)
    table = default_table(2, 1.0)
    args = table.core_args()
    n_pts, n_pos = int(20000 * scale), int(2000 * scale)
    points = rng.uniform(0, 10, (n_pts, 2))
    pos = rng.uniform(0, 10, (n_pos, 2))
    q = rng.choice([-1.0, 1.0], n_pos)
    r = np.exp(rng.uniform(np.log(1e-7), np.log(80.0), int(1_000_000 * scale)))
    phi = rng.normal(size=int(1_000_000 * scale))
    w = rng.uniform(size=phi.size)
    y = np.array([5.0, 5.0])
    return {
        "table_eval": lambda c: c.table_eval(r, *args),
        "kernel_field": lambda c: c.kernel_field(points, pos, q, *args),
        "indicator_field": lambda c: c.indicator_field(points, pos, q, 0.4),
        "cos_sum": lambda c: c.cos_sum(phi, 5.0, w),
        "min_distance2": lambda c: c.min_distance2(pos, y, -1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    args = ap.parse_args()
    if "compiled" not in BACKENDS:
        print("compiled core not built; only the fallback is available")
    print(f"{'kernel':<16}" + "".join(f"{name:>14}" for name in BACKENDS) + f"{'speedup':>10}")
    for name, fn in cases(args.scale).items():
        outs = {b: np.asarray(fn(mod)) for b, mod in BACKENDS.items()}
        ref = outs["python"]
        for b, out in outs.items():
            if not np.allclose(out, ref, rtol=1e-12, atol=1e-12):
                raise SystemExit(f"{name}: backend {b} disagrees with the fallback")
        times = {b: min(timeit.repeat(lambda m=mod: fn(m), number=1, repeat=args.repeat))
                 for b, mod in BACKENDS.items()}
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<16}" + "".join(f"{times[b] * 1e3:>12.2f}ms" for b in BACKENDS) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
