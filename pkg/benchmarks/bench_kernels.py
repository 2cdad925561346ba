"""Compare the compiled and NumPy kernels on M-step-sized inputs.

Run with ``python3 benchmarks/bench_kernels.py [--records N] [--personas K] [--repeat R]``.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from persona_align import _kernels_py

try:
    from persona_align import _kernels as compiled
except ImportError:
    compiled = None


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--records", type=int, default=200)
    ap.add_argument("--personas", type=int, default=250)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    a = rng.normal(size=(args.records, 4))
    b = rng.normal(size=(args.personas, 4))
    w = rng.uniform(size=(args.records, args.personas))
    lam = 40 / 3

    backends = {"numpy": _kernels_py}
    if compiled is not None:
        backends["cython"] = compiled
    else:
        print("compiled kernels not built; timing the NumPy fallback only")

    print(f"N={args.records} records, K={args.personas} personas, {args.repeat} calls each")
    print(f"{'backend':<8} {'loading_matrix':>16} {'loglik_grad':>14}")
    for name, mod in backends.items():
        t1 = timeit.timeit(lambda: mod.loading_matrix(a, b, lam), number=args.repeat) / args.repeat
        t2 = timeit.timeit(lambda: mod.weighted_loglik_grad(a, b, w, lam), number=args.repeat) / args.repeat
        print(f"{name:<8} {1e3 * t1:13.3f} ms {1e3 * t2:11.3f} ms")


if __name__ == "__main__":
    main()
