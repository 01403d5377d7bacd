"""Frequency-hashed convolution and hashed fully-connected layers.

A frequency-hashed conv layer never stores its filter bank. The trainable
state is a short weight vector w, partitioned into per-frequency-band
sub-vectors. Each virtual DCT coefficient of each filter is tied to one
slot of its band's sub-vector by a seeded hash of (k, l, j1, j2), with an
independent sign hash attached. Filters are recovered on the fly:

    gather   freq[l,k,j1,j2] = sign * w[band offset + bucket]
    inverse  filters = idct2 of every (l, k) slice

Because the inverse transform is linear and orthonormal, the exact
gradient of w is the forward transform of the spatial filter gradient,
scatter-added per bucket with the same signs. The gather tables are fixed
at construction, so reconstruction is a pure function of (w, seed) and two
calls agree bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import dct, tensor_core as tc
from .errors import ShapeError
from .hashing import (
    BandAllocation,
    allocate_buckets,
    bucket_hash_batch,
    encode_keys,
    sign_batch,
)
from .layers import ConvLayerBase, init_rng


def _hash_tables(layer_seed, first, second, j1, j2, band_counts, band_offsets,
                 use_sign):
    """Bucket index and sign arrays for a grid of keys.

    ``band_counts``/``band_offsets`` give the modulus and flat offset per
    key (already broadcast to the key grid). Single-band layers pass
    constant arrays.
    """
    shape = np.broadcast(first, second, j1, j2).shape
    rows = encode_keys(layer_seed, first, second, j1, j2)
    local = bucket_hash_batch(rows) % band_counts.reshape(-1).astype(np.uint64)
    bucket = band_offsets.reshape(-1) + local.astype(np.int64)
    if use_sign:
        sign = sign_batch(rows).reshape(shape)
    else:
        sign = np.ones(shape)
    return bucket.reshape(shape), sign


def _bucket_means(bucket, values, k_total) -> np.ndarray:
    """Least-squares init: each bucket takes the mean of its assigned values."""
    sums = np.bincount(bucket.ravel(), weights=values.ravel(), minlength=k_total)
    counts = np.bincount(bucket.ravel(), minlength=k_total)
    return sums / np.maximum(counts, 1)


class FreshConv(ConvLayerBase):
    """Convolution whose filters are hash-shared DCT coefficients."""

    method = "fresh"

    def __init__(self, m, n, d, k_total, alpha=1.0, beta=1.0, layer_seed=0,
                 use_sign=True, allocation: BandAllocation | None = None,
                 init=True):
        super().__init__(m, n, d)
        self.layer_seed = layer_seed
        self.use_sign = use_sign
        self.allocation = allocation or allocate_buckets(
            d, m, n, k_total, alpha, beta
        )
        self.plan = dct.get_plan(d)

        l_idx, k_idx, j1, j2 = np.indices((n, m, d, d))
        band = j1 + j2
        self.bucket, self.sign = _hash_tables(
            layer_seed, k_idx, l_idx, j1, j2,
            self.allocation.counts[band], self.allocation.offsets[band],
            use_sign,
        )
        self.w = np.zeros(self.allocation.k_total)
        self.w_grad = np.zeros_like(self.w)
        if init:
            virtual = tc.glorot_uniform(
                (n, m, d, d), m * d * d, n * d * d, init_rng(layer_seed)
            )
            freq = dct.dct2_batch(self.plan, virtual)
            self.w[:] = _bucket_means(
                self.bucket, self.sign * freq, self.allocation.k_total
            )

    @property
    def k_total(self) -> int:
        return self.allocation.k_total

    def band_slices(self):
        """Views of w as the per-band sub-vectors."""
        offs = self.allocation.offsets
        return [
            self.w[offs[j] : offs[j] + int(self.allocation.counts[j])]
            for j in range(len(self.allocation.counts))
        ]

    def frequency_tensor(self) -> np.ndarray:
        return self.sign * self.w[self.bucket]

    def materialize(self):
        return dct.idct2_batch(self.plan, self.frequency_tensor())

    def apply_filter_grad(self, dfilters):
        freq_grad = dct.dct2_batch(self.plan, dfilters)
        self.w_grad[:] = np.bincount(
            self.bucket.ravel(),
            weights=(self.sign * freq_grad).ravel(),
            minlength=self.w.size,
        )

    def weight_params(self):
        return [self.w]

    def weight_grads(self):
        return [self.w_grad]


class HashedFC:
    """Fully-connected layer with a single hash-shared weight vector.

    The virtual matrix entry W[i, j] is sign(i, j) * w[h(i, j)]; keys use
    the common encoding with (i, j) in the frequency-index slots and zeroed
    plane indices. The matrix is materialized per forward pass (desk-scale
    dims make this cheap) and the weight gradient is the signed
    scatter-add of the dense matrix gradient.
    """

    method = "hashed_fc"

    def __init__(self, in_dim, out_dim, k, layer_seed=0, use_sign=True,
                 init=True):
        if k < 1 or k > in_dim * out_dim:
            raise ShapeError(
                f"hashed fc bucket count must be in [1, {in_dim * out_dim}], got {k}"
            )
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.k = k
        self.layer_seed = layer_seed
        self.use_sign = use_sign

        i_idx, j_idx = np.indices((in_dim, out_dim))
        ones = np.full((in_dim, out_dim), k, dtype=np.int64)
        self.bucket, self.sign = _hash_tables(
            layer_seed, np.zeros_like(i_idx), np.zeros_like(i_idx),
            i_idx, j_idx, ones, np.zeros_like(ones), use_sign,
        )
        self.w = np.zeros(k)
        self.w_grad = np.zeros_like(self.w)
        self.bias = np.zeros(out_dim)
        self.bias_grad = np.zeros_like(self.bias)
        self._cache = None
        if init:
            virtual = tc.glorot_uniform(
                (in_dim, out_dim), in_dim, out_dim, init_rng(layer_seed)
            )
            self.w[:] = _bucket_means(self.bucket, self.sign * virtual, k)

    def materialize(self) -> np.ndarray:
        return self.sign * self.w[self.bucket]

    def forward(self, x, train=False, rng=None):
        weight = self.materialize()
        self._cache = (x, weight)
        return tc.fc_forward(x, weight, self.bias)

    def backward(self, grad_out):
        if self._cache is None:
            raise ShapeError("backward called without a forward pass")
        x, weight = self._cache
        dx, dweight, dbias = tc.fc_backward(grad_out, x, weight)
        self.bias_grad[:] = dbias
        self.w_grad[:] = np.bincount(
            self.bucket.ravel(),
            weights=(self.sign * dweight).ravel(),
            minlength=self.k,
        )
        return dx

    def params(self):
        return [self.w, self.bias]

    def grads(self):
        return [self.w_grad, self.bias_grad]

    @property
    def weight_count(self) -> int:
        return self.k

    @property
    def bias_count(self) -> int:
        return self.out_dim

    @property
    def virtual_weight_count(self) -> int:
        return self.in_dim * self.out_dim
