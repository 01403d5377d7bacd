"""JIT-compiled inner loops for the bandwidth-bound kernels.

The patch-matrix fold (adjoint of im2col) and the pooling scatter dominate
backward time when done as strided numpy passes; a fused single-pass loop
is several times faster. numba is optional: without it the numpy fallbacks
in tensor_core are used and results are identical.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def gather_cols(xp, d):
        """Unfold d x d patches of the padded input into rows (im2col)."""
        b, m, hp, wp = xp.shape
        h = hp - d + 1
        w = wp - d + 1
        cols = np.empty((b * h * w, m * d * d))
        for bi in range(b):
            for y in range(h):
                for x in range(w):
                    i = bi * (h * w) + y * w + x
                    idx = 0
                    for c in range(m):
                        for u in range(d):
                            for v in range(d):
                                cols[i, idx] = xp[bi, c, y + u, x + v]
                                idx += 1
        return cols

    @numba.njit(cache=True)
    def fold_cols(dwin, b, m, d, hp, wp):
        """Scatter-add patch-gradient rows back onto the padded input.

        dwin is (b*H*W, m*d*d) in the same layout the forward unfold
        produced; one sequential pass keeps the padded output cache-resident.
        """
        h = hp - d + 1
        w = wp - d + 1
        out = np.zeros((b, m, hp, wp))
        for bi in range(b):
            for y in range(h):
                for x in range(w):
                    i = bi * (h * w) + y * w + x
                    idx = 0
                    for c in range(m):
                        for u in range(d):
                            for v in range(d):
                                out[bi, c, y + u, x + v] += dwin[i, idx]
                                idx += 1
        return out

    @numba.njit(cache=True)
    def maxpool2_scatter(grad_out, x):
        """Route pooled gradients to the first-argmax position per window."""
        b, c, h, w = x.shape
        out = np.zeros((b, c, h, w))
        for bi in range(b):
            for ci in range(c):
                for y in range(h // 2):
                    for xo in range(w // 2):
                        best_u, best_v = 0, 0
                        best = x[bi, ci, 2 * y, 2 * xo]
                        for u in range(2):
                            for v in range(2):
                                val = x[bi, ci, 2 * y + u, 2 * xo + v]
                                if val > best:
                                    best = val
                                    best_u, best_v = u, v
                        out[bi, ci, 2 * y + best_u, 2 * xo + best_v] = (
                            grad_out[bi, ci, y, xo]
                        )
        return out
