"""Time the compiled kernels against the numpy fallback on representative inputs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from psmpose import _kernels_py, kernels

try:
    from psmpose import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng):
    n = 28800  # one night at 1 Hz
    t = np.cumsum(rng.uniform(0.09, 0.11, size=288000))  # one night at 10 Hz
    vals = rng.random((n, 144))
    vals[1::2] = vals[::2]  # plenty of duplicates
    labels = rng.integers(0, 4, size=n)
    above = (rng.random(len(t)) > 0.001).astype(np.uint8)
    x = np.sort(rng.random(20000))
    y = rng.integers(0, 4, size=20000)
    img = rng.random((32, 64))
    return {
        "dedup_mask": lambda impl: kernels.dedup_mask(vals, labels, 0.01, impl=impl),
        "persistent_onset": lambda impl: kernels.persistent_onset(above, t, 10.0, impl=impl),
        "nearest_join": lambda impl: kernels.nearest_join(t, t + 0.03, 0.2, impl=impl),
        "nearest_instant": lambda impl: kernels.nearest_instant(t, 1.0, impl=impl),
        "gini_scan": lambda impl: kernels.gini_scan(x, y, 4, 2, impl=impl),
        "bilinear_resize": lambda impl: kernels.bilinear_resize(img, 64, 128, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled is not None else [])
    if _compiled is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<18}" + "".join(f"{name + ' ms':>14}" for name, _ in impls) + ("     speedup" if len(impls) > 1 else ""))
    for name, fn in cases(rng).items():
        times = []
        for _, impl in impls:
            fn(impl)  # warm up
            times.append(min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e3)
        line = f"{name:<18}" + "".join(f"{ms:>14.3f}" for ms in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
