"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``DECORR_DISABLE_NUMBA`` is unset (or set to ``0``/``false``).
Both paths expose the same functions with identical signatures; the
benchmark in ``benchmarks/bench_kernels.py`` times them against each other.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("DECORR_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by DECORR_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# pure numpy
# --------------------------------------------------------------------------

def csr_matmul_numpy(row_ptr, col_idx, values, dense):
    n_rows = row_ptr.shape[0] - 1
    out = np.zeros((n_rows, dense.shape[1]), dtype=np.float64)
    if values.shape[0] == 0:
        return out
    prod = values[:, None] * dense[col_idx]
    counts = np.diff(row_ptr)
    nonempty = counts > 0
    # reduceat misbehaves on empty segments, so only reduce the occupied rows
    out[nonempty] = np.add.reduceat(prod, row_ptr[:-1][nonempty], axis=0)
    return out


def pairwise_unit_distance_sum_numpy(units, block=512):
    """Sum of ||u_i - u_j|| over i < j, computed blockwise by direct differences."""
    m = units.shape[0]
    total = 0.0
    for start in range(0, m, block):
        stop = min(start + block, m)
        chunk = units[start:stop]
        for i in range(chunk.shape[0]):
            gi = start + i
            if gi + 1 >= m:
                break
            diff = units[gi + 1:] - chunk[i]
            total += float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).sum())
    return total


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def csr_matmul_numba(row_ptr, col_idx, values, dense):
        n_rows = row_ptr.shape[0] - 1
        k = dense.shape[1]
        out = np.zeros((n_rows, k), dtype=np.float64)
        for i in range(n_rows):
            for p in range(row_ptr[i], row_ptr[i + 1]):
                j = col_idx[p]
                v = values[p]
                for c in range(k):
                    out[i, c] += v * dense[j, c]
        return out

    @njit(cache=True)
    def pairwise_unit_distance_sum_numba(units):
        m, d = units.shape
        total = 0.0
        for i in range(m - 1):
            row_total = 0.0
            for j in range(i + 1, m):
                acc = 0.0
                for c in range(d):
                    diff = units[i, c] - units[j, c]
                    acc += diff * diff
                row_total += np.sqrt(acc)
            total += row_total
        return total

    csr_matmul = csr_matmul_numba
    pairwise_unit_distance_sum = pairwise_unit_distance_sum_numba
else:
    csr_matmul = csr_matmul_numpy
    pairwise_unit_distance_sum = pairwise_unit_distance_sum_numpy
