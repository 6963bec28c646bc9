"""Matrix multiplication with a reproducibility switch.

All dense products in the package go through :func:`matmul`. In deterministic
mode the product is computed by a compiled loop kernel whose per-element
accumulation order is fixed (ascending inner index, no fused multiply-add),
so results are bit-identical across runs, thread counts, and BLAS builds.
The fast path delegates to ``numpy.matmul`` and accepts whatever blocking
and FMA usage the local BLAS performs.

The kernel iterates i-k-j: for each output row the k-th rank-1 contribution
is added in order, which reproduces exactly the naive

    out[i, j] = sum_k a[i, k] * b[k, j]

evaluated left to right, while still walking both operands row-major.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    _HAVE_NUMBA = False


def _matmul_loops_py(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, p = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for k in range(p):
            av = a[i, k]
            for j in range(n):
                out[i, j] += av * b[k, j]
    return out


if _HAVE_NUMBA:
    # cache=True persists the compiled kernel next to this file; no fastmath,
    # so LLVM may not reassociate the sum or contract it into FMAs.
    _matmul_loops = njit(cache=True)(_matmul_loops_py)
else:  # pragma: no cover
    def _matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        # Vectorised fallback with the same accumulation order: the k-th
        # outer product is added to the running sum in ascending k.
        m, p = a.shape
        _, n = b.shape
        out = np.zeros((m, n), dtype=a.dtype)
        for k in range(p):
            out += a[:, k : k + 1] * b[k : k + 1, :]
        return out


def matmul(a: np.ndarray, b: np.ndarray, deterministic: bool = True) -> np.ndarray:
    """Product of two 2-d arrays.

    Raises ShapeError unless ``a`` is (m, p), ``b`` is (p, n). The output is
    (m, n) in the promoted dtype of the operands (float64 throughout the
    training stack).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    if not deterministic:
        return np.matmul(a, b)
    dtype = np.promote_types(a.dtype, b.dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        dtype = np.dtype(np.float64)
    a = np.ascontiguousarray(a, dtype=dtype)
    b = np.ascontiguousarray(b, dtype=dtype)
    return _matmul_loops(a, b)
