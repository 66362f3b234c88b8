"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--samples 1000000] [--repeat 5]

Each kernel is checked for agreement first, warmed up once (so JIT compile
time is excluded), then timed as the best of ``--repeat`` runs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from gatedtrader import _kernels as k


def cases(samples: int, seed: int):
    rng = np.random.default_rng(seed)
    mags = np.abs(rng.standard_normal(samples)) * 1e-3
    x = 100 + np.cumsum(rng.standard_normal(30))
    y = 0.5 * x + rng.standard_normal(30)
    return [
        (f"rolling_zscores n={samples}", k.rolling_zscores_numba, k.rolling_zscores_numpy, (mags, 30, 10, 1e-12)),
        ("binom_tail k=72 n=139", k.binom_tail_numba, k.binom_tail_numpy, (72, 139, 0.5, True)),
        ("binom_tail k=5200 n=10000", k.binom_tail_numba, k.binom_tail_numpy, (5200, 10000, 0.5, True)),
        ("pearson n=30", k.pearson_numba, k.pearson_numpy, (x, y)),
    ]


def best_of(fn, args, repeat: int) -> float:
    number = 1
    # scale tiny kernels up so the timer resolution does not dominate
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05 and number < 1_000_000:
        number *= 10
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def run(samples: int = 1_000_000, repeat: int = 5, seed: int = 0) -> list[dict]:
    rows = []
    for name, fast, slow, args in cases(samples, seed):
        a, b = fast(*args), slow(*args)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)
        t_numba, t_numpy = best_of(fast, args, repeat), best_of(slow, args, repeat)
        rows.append({"kernel": name, "numba_s": t_numba, "numpy_s": t_numpy, "speedup": t_numpy / t_numba})
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    print(f"{'kernel':<30} {'numba':>12} {'numpy':>12} {'speedup':>8}")
    for r in run(args.samples, args.repeat, args.seed):
        print(f"{r['kernel']:<30} {r['numba_s'] * 1e6:>10.1f}us {r['numpy_s'] * 1e6:>10.1f}us {r['speedup']:>7.1f}x")


if __name__ == "__main__":
    main()
