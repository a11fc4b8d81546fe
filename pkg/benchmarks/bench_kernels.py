"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from barron_icl import _pykernels

try:
    from barron_icl import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    N, p = 256, 65
    vh, qh, kh = rng.normal(size=(p, N + 1)), rng.normal(size=(p, N + 1)), rng.normal(size=(p, N + 1))
    z = rng.normal(size=100_000)
    phi = np.column_stack([rng.uniform(size=(N, p - 1)), np.ones(N)])
    y = rng.normal(size=N)
    return {
        "logistic_attention (65 x 257)": lambda m: m.logistic_attention(vh, qh, kh),
        "soft_threshold (1e5)": lambda m: m.soft_threshold(z, 0.3),
        "logistic (1e5)": lambda m: m.logistic(z),
        "ista_path (N=256, p=65, T=200)": lambda m: m.ista_path(phi, y, 0.05, 1 / 130, 200),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = {"numpy": _pykernels}
    if _ckernels is not None:
        impls["cython"] = _ckernels
    else:
        print("compiled kernels not built; timing numpy only")
    print(f"{'kernel':34s}" + "".join(f"{k:>12s}" for k in impls) + ("   speedup" if len(impls) == 2 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for label, mod in impls.items():
            fn(mod)  # warm up
            loops = 3
            times[label] = min(timeit.repeat(lambda: fn(mod), number=loops, repeat=args.repeat)) / loops
        row = f"{name:34s}" + "".join(f"{times[k] * 1e3:10.3f}ms" for k in impls)
        if len(impls) == 2:
            row += f"   {times['numpy'] / times['cython']:6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
