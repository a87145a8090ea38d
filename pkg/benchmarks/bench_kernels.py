"""Compare the compiled and pure-NumPy row-sum backends.

Times one bag-pair kernel sum and a small full distance matrix with each
available backend, and checks that both give the same numbers.

    python benchmarks/bench_kernels.py --patches 500 --dim 64 --bags 20
"""

import argparse
import json
import time

import numpy as np

from bagkernel import _backend, mmd
from bagkernel.bags import EmbeddingBag


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patches", type=int, default=500)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--bags", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.patches, args.dim))
    y = rng.normal(size=(args.patches, args.dim))
    scale = mmd.PatchKernelParams().scale
    bags = [EmbeddingBag(f"b{i}", f"p{i}", rng.normal(size=(args.patches, args.dim)))
            for i in range(args.bags)]

    results, matrices = {}, {}
    original = _backend.kernel_rowsums
    try:
        for name, fn in sorted(_backend.BACKENDS.items()):
            _backend.kernel_rowsums = fn
            pair = best_of(lambda: fn(x, y, scale, 1024), args.repeat)
            t0 = time.perf_counter()
            D = mmd.pairwise_distances(bags, threads=args.threads)
            full = time.perf_counter() - t0
            n_pairs = args.bags * (args.bags - 1) // 2
            matrices[name] = D.values
            results[name] = {"pair_ms": 1e3 * pair, "matrix_s": full, "pairs": n_pairs,
                             "ms_per_pair": 1e3 * full / n_pairs}
    finally:
        _backend.kernel_rowsums = original

    if len(matrices) == 2:
        a, b = matrices["cython"], matrices["python"]
        results["max_abs_diff"] = float(np.abs(a - b).max())

    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"{args.patches} patches x {args.dim} dims, {args.bags} bags, {args.threads} thread(s)")
    print(f"{'backend':<8} {'one pair (ms)':>14} {'matrix (s)':>11} {'ms/pair':>9}")
    for name in sorted(_backend.BACKENDS):
        r = results[name]
        print(f"{name:<8} {r['pair_ms']:>14.2f} {r['matrix_s']:>11.2f} {r['ms_per_pair']:>9.2f}")
    if "max_abs_diff" in results:
        speedup = results["python"]["matrix_s"] / results["cython"]["matrix_s"]
        print(f"speedup {speedup:.2f}x, max |D_cython - D_python| = {results['max_abs_diff']:.1e}")
    else:
        print("compiled core not built; only the NumPy backend was timed")


if __name__ == "__main__":
    main()
