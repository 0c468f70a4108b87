#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both implementations are imported directly, so ``DECORR_DISABLE_NUMBA``
has no effect here. Each case also checks that the two paths agree.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from decorr import _kernels as K
from decorr.graph import erdos_renyi, normalize_adjacency
from decorr.tensor import make_rng


def _cases(rng):
    for n, p, width in ((2708, 0.0015, 16), (2708, 0.0015, 64), (10000, 0.0005, 64)):
        g = erdos_renyi(n, p, make_rng(int(rng.integers(1 << 31))))
        a = normalize_adjacency(g)
        dense = rng.standard_normal((n, width))
        args = (a.row_ptr, a.col_idx, a.values, dense)
        yield f"csr_matmul n={n} nnz={a.values.size} k={width}", K.csr_matmul_numpy, \
            getattr(K, "csr_matmul_numba", None), args
    for m, d in ((64, 16), (256, 64), (1024, 64)):
        u = rng.standard_normal((m, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        yield f"pairwise_unit_distance_sum m={m} d={d}", K.pairwise_unit_distance_sum_numpy, \
            getattr(K, "pairwise_unit_distance_sum_numba", None), (u,)


def _best(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the results to this file")
    args = p.parse_args(argv)

    if not K.HAVE_NUMBA:
        print("numba is unavailable; only the numpy path is timed", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'case':<46} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, slow, fast, kargs in _cases(rng):
        t_np = _best(slow, kargs, args.repeat)
        row = {"case": name, "numpy_ms": t_np * 1e3, "numba_ms": None, "speedup": None}
        if fast is not None:
            ref, got = slow(*kargs), fast(*kargs)
            if not np.allclose(ref, got, rtol=1e-10, atol=1e-10):
                print(f"{name}: numba and numpy disagree", file=sys.stderr)
                return 1
            fast(*kargs)  # compile outside the timed region
            t_nb = _best(fast, kargs, args.repeat)
            row.update(numba_ms=t_nb * 1e3, speedup=t_np / t_nb)
        rows.append(row)
        nb = "-" if row["numba_ms"] is None else f"{row['numba_ms']:.3f}"
        sp = "-" if row["speedup"] is None else f"{row['speedup']:.1f}x"
        print(f"{name:<46} {row['numpy_ms']:>10.3f} {nb:>10} {sp:>8}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
