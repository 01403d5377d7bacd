"""Comparison methods: spatial hashing, frequency truncation, filter
dropping, and low-rank factorization.

All conv baselines share the FreshConv layer surface (forward, backward,
params, counts) so they drop into the same network builder and trainer.
"""

from __future__ import annotations

import numpy as np

from . import dct, tensor_core as tc
from .errors import AllocationError
from .fresh_layer import _bucket_means, _hash_tables
from .layers import ConvLayerBase, init_rng


class SpatialHashedConv(ConvLayerBase):
    """Hash-shared weights applied directly to spatial filter entries.

    Same gather/scatter mechanics as the frequency-hashed layer but with a
    single hash space over (k, l, i1, i2) and no transform anywhere.
    """

    method = "hashed_spatial"

    def __init__(self, m, n, d, k_total, layer_seed=0, use_sign=True,
                 init=True):
        super().__init__(m, n, d)
        if k_total < 1 or k_total > m * n * d * d:
            raise AllocationError(
                f"spatial hashing needs 1 <= K <= {m * n * d * d}, got {k_total}"
            )
        self.k_total = k_total
        self.layer_seed = layer_seed
        self.use_sign = use_sign

        l_idx, k_idx, i1, i2 = np.indices((n, m, d, d))
        const = np.full((n, m, d, d), k_total, dtype=np.int64)
        self.bucket, self.sign = _hash_tables(
            layer_seed, k_idx, l_idx, i1, i2, const, np.zeros_like(const),
            use_sign,
        )
        self.w = np.zeros(k_total)
        self.w_grad = np.zeros_like(self.w)
        if init:
            virtual = tc.glorot_uniform(
                (n, m, d, d), m * d * d, n * d * d, init_rng(layer_seed)
            )
            self.w[:] = _bucket_means(self.bucket, self.sign * virtual, k_total)

    def materialize(self):
        return self.sign * self.w[self.bucket]

    def apply_filter_grad(self, dfilters):
        self.w_grad[:] = np.bincount(
            self.bucket.ravel(),
            weights=(self.sign * dfilters).ravel(),
            minlength=self.w.size,
        )

    def weight_params(self):
        return [self.w]

    def weight_grads(self):
        return [self.w_grad]


def dropfreq_kept_positions(d: int, keep: int):
    """The lowest-frequency coefficient positions of a d x d grid.

    Ordered by band index j1+j2 with lexicographic (j1, j2) tie-break;
    returns two index arrays of length ``keep``.
    """
    order = sorted(
        ((j1, j2) for j1 in range(d) for j2 in range(d)),
        key=lambda p: (p[0] + p[1], p[0], p[1]),
    )[:keep]
    j1 = np.array([p[0] for p in order], dtype=np.int64)
    j2 = np.array([p[1] for p in order], dtype=np.int64)
    return j1, j2


class DropFreqConv(ConvLayerBase):
    """Learns DCT coefficients per filter, zeroing everything above a cutoff.

    The budget buys floor(K / (m*n)) coefficients per filter; the remainder
    of the budget is dropped. Gradients exist only for kept coefficients.
    """

    method = "dropfreq"

    def __init__(self, m, n, d, k_total, layer_seed=0, init=True):
        super().__init__(m, n, d)
        keep = k_total // (m * n)
        if keep < 1:
            raise AllocationError(
                f"dropfreq cannot keep even one coefficient per filter: "
                f"K={k_total} < {m * n} filters"
            )
        keep = min(keep, d * d)
        self.keep = keep
        self.k_total = n * m * keep
        self.layer_seed = layer_seed
        self.plan = dct.get_plan(d)
        self.kept_j1, self.kept_j2 = dropfreq_kept_positions(d, keep)
        self.coeffs = np.zeros((n, m, keep))
        self.coeffs_grad = np.zeros_like(self.coeffs)
        if init:
            virtual = tc.glorot_uniform(
                (n, m, d, d), m * d * d, n * d * d, init_rng(layer_seed)
            )
            freq = dct.dct2_batch(self.plan, virtual)
            self.coeffs[:] = freq[:, :, self.kept_j1, self.kept_j2]

    def frequency_tensor(self):
        freq = np.zeros((self.n, self.m, self.d, self.d))
        freq[:, :, self.kept_j1, self.kept_j2] = self.coeffs
        return freq

    def materialize(self):
        return dct.idct2_batch(self.plan, self.frequency_tensor())

    def apply_filter_grad(self, dfilters):
        freq_grad = dct.dct2_batch(self.plan, dfilters)
        self.coeffs_grad[:] = freq_grad[:, :, self.kept_j1, self.kept_j2]

    def weight_params(self):
        return [self.coeffs]

    def weight_grads(self):
        return [self.coeffs_grad]


class LrdConv(ConvLayerBase):
    """Rank-r factorization of the unfolded (m*d*d) x n filter matrix.

    Stores A (m*d*d, r) and B (r, n); the virtual filter bank is A @ B
    folded back so output planes index rows of the bank. Both factors are
    trained by exact chain rule through the product.
    """

    method = "lrd"

    def __init__(self, m, n, d, budget, layer_seed=0, init=True,
                 init_filters=None, rank=None):
        super().__init__(m, n, d)
        unit = m * d * d + n
        r = rank if rank is not None else budget // unit
        if r < 1:
            raise AllocationError(
                f"low-rank budget {budget} cannot afford rank 1 "
                f"({unit} parameters at these dims)"
            )
        # ranks past min(m*d*d, n) add parameters but no expressivity
        r = min(r, m * d * d, n)
        self.rank = r
        self.k_total = r * unit
        self.layer_seed = layer_seed
        self.a = np.zeros((m * d * d, r))
        self.b = np.zeros((r, n))
        self.a_grad = np.zeros_like(self.a)
        self.b_grad = np.zeros_like(self.b)
        if init or init_filters is not None:
            if init_filters is None:
                init_filters = tc.glorot_uniform(
                    (n, m, d, d), m * d * d, n * d * d, init_rng(layer_seed)
                )
            unfolded = init_filters.reshape(n, m * d * d).T
            u, s, vt = np.linalg.svd(unfolded, full_matrices=False)
            self.a[:] = u[:, :r] * s[:r]
            self.b[:] = vt[:r, :]

    def materialize(self):
        return (self.a @ self.b).T.reshape(self.n, self.m, self.d, self.d)

    def apply_filter_grad(self, dfilters):
        dw = dfilters.reshape(self.n, -1).T
        self.a_grad[:] = dw @ self.b.T
        self.b_grad[:] = self.a.T @ dw
        return dw

    def weight_params(self):
        return [self.a, self.b]

    def weight_grads(self):
        return [self.a_grad, self.b_grad]


def dropfilt_spec(spec, rate: float):
    """Shrink a network spec by scaling conv output planes by ``rate``.

    Plane counts floor at 1 and cascade into following layers; the
    fully-connected input is recomputed from the surviving planes and the
    spatial size left after pooling.
    """
    from .netspec import LayerSpec, NetworkSpec

    rows, cols = spec.input_size
    planes = spec.layers[0].in_planes if spec.layers else 0
    out_layers = []
    for entry in spec.layers:
        if entry.kind == "conv":
            new_out = max(1, int(entry.out_planes * rate))
            out_layers.append(
                LayerSpec(
                    kind="conv",
                    in_planes=planes,
                    out_planes=new_out,
                    filter_size=entry.filter_size,
                    ops=entry.ops,
                    compression_override=entry.compression_override,
                )
            )
            planes = new_out
            for op in entry.ops:
                if op == "MP":
                    rows //= 2
                    cols //= 2
        else:
            in_dim = planes * rows * cols
            out_layers.append(
                LayerSpec(
                    kind="fc",
                    in_planes=in_dim,
                    out_planes=entry.out_planes,
                    ops=entry.ops,
                    compression_override=entry.compression_override,
                )
            )
            planes = entry.out_planes
            rows = cols = 1
    return NetworkSpec(
        input_size=spec.input_size,
        layers=tuple(out_layers),
        dropout_rate=spec.dropout_rate,
    )
