import numpy as np
import pytest

import freshnets.hashing as hashing
from freshnets.errors import AllocationError, ConfigError

from conftest import oracle_allocate


# ------------------------------------------------------------------ fnv

def test_fnv1a_reference_vectors():
    assert hashing.hash64(b"") == 0xCBF29CE484222325
    assert hashing.hash64(b"a") == 0xAF63DC4C8601EC8C


def test_fnv1a_determinism_and_sensitivity():
    assert hashing.hash64(b"abc") == hashing.hash64(b"abc")
    assert hashing.hash64(b"abc") != hashing.hash64(b"abd")


def test_batch_hash_matches_scalar():
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 256, size=(64, 25), endpoint=False).astype(np.uint8)
    batch = hashing.hash64_batch(rows)
    for i in range(rows.shape[0]):
        assert int(batch[i]) == hashing.hash64(rows[i].tobytes())


def test_key_encoding_is_24_little_endian_bytes():
    key = hashing.HashKey(layer_seed=0x0102030405060708, k=1, l=2, j1=3, j2=4)
    raw = key.encode()
    assert len(raw) == 24
    assert raw == (b"\x08\x07\x06\x05\x04\x03\x02\x01"
                   b"\x01\x00\x00\x00\x02\x00\x00\x00"
                   b"\x03\x00\x00\x00\x04\x00\x00\x00")


def test_encode_keys_matches_scalar_encoding():
    rows = hashing.encode_keys(7, [0, 1], [2, 3], [4, 5], [6, 7])
    for i, (k, l, j1, j2) in enumerate([(0, 2, 4, 6), (1, 3, 5, 7)]):
        assert rows[i].tobytes() == hashing.HashKey(7, k, l, j1, j2).encode()


# --------------------------------------------------------------- buckets

def test_bucket_index_single_bucket_and_determinism():
    key = hashing.HashKey(1, 2, 3, 4, 5)
    assert hashing.bucket_index(key, 1) == 0
    assert hashing.bucket_index(key, 17) == hashing.bucket_index(key, 17)
    with pytest.raises(AllocationError):
        hashing.bucket_index(key, 0)


def test_bucket_index_seed_separation():
    hits = sum(
        hashing.bucket_index(hashing.HashKey(1, k, 0, 0, 0), 1000)
        == hashing.bucket_index(hashing.HashKey(2, k, 0, 0, 0), 1000)
        for k in range(200)
    )
    assert hits < 10  # ~0.2 expected for independent assignments


def test_bucket_distribution_uniform():
    # 1e5 distinct keys into 64 buckets: each load within 5 sigma
    count, k_band = 100_000, 64
    rows = hashing.encode_keys(
        123, np.arange(count), np.zeros(count), np.zeros(count), np.zeros(count)
    )
    buckets = hashing.bucket_hash_batch(rows) % np.uint64(k_band)
    loads = np.bincount(buckets.astype(np.int64), minlength=k_band)
    expected = count / k_band
    sigma = np.sqrt(count * (1 / k_band) * (1 - 1 / k_band))
    assert np.abs(loads - expected).max() < 5 * sigma


def test_sign_hash_values_and_balance():
    key = hashing.HashKey(9, 0, 0, 0, 0)
    assert hashing.sign_hash(key) in (-1, 1)
    assert hashing.sign_hash(key) == hashing.sign_hash(key)

    count = 100_000
    rows = hashing.encode_keys(
        77, np.arange(count), np.zeros(count), np.zeros(count), np.zeros(count)
    )
    signs = hashing.sign_batch(rows)
    assert set(np.unique(signs)) <= {-1.0, 1.0}
    assert abs(signs.mean()) < 0.02


def test_sign_independent_of_bucket_hash():
    # same key, different domain tags: empirically uncorrelated outputs
    count = 20_000
    rows = hashing.encode_keys(
        5, np.arange(count), np.zeros(count), np.zeros(count), np.zeros(count)
    )
    b = (hashing.bucket_hash_batch(rows) & np.uint64(1)).astype(np.float64)
    s = (hashing.sign_batch(rows) + 1) / 2
    corr = np.corrcoef(b, s)[0, 1]
    assert abs(corr) < 0.03


# ----------------------------------------------------------------- bands

def test_band_of():
    assert hashing.band_of(0, 0) == 0
    d = 7
    assert hashing.band_of(d - 1, d - 1) == 2 * d - 2


def test_band_sizes_d5():
    sizes = hashing.band_sizes(5, 1, 1)
    assert list(sizes) == [1, 2, 3, 4, 5, 4, 3, 2, 1]
    assert sizes.sum() == 25
    assert list(hashing.band_sizes(5, 2, 3)) == [6 * s for s in
                                                 [1, 2, 3, 4, 5, 4, 3, 2, 1]]


# ------------------------------------------------------------ allocation

def test_allocate_rate_one_uses_every_coefficient():
    alloc = hashing.allocate_buckets(3, 1, 1, 9, 1.0, 1.0)
    assert list(alloc.counts) == [1, 2, 3, 2, 1]
    assert list(alloc.counts) == list(alloc.sizes)


def test_allocate_uniform_d5_k13_frozen():
    # frozen output of the scalar step-through oracle
    alloc = hashing.allocate_buckets(5, 1, 1, 13, 1.0, 1.0)
    assert list(alloc.counts) == [1, 1, 1, 2, 3, 2, 1, 1, 1]
    np.testing.assert_allclose(alloc.rates, 0.52)


def test_allocate_low_frequency_preference_frozen():
    alloc = hashing.allocate_buckets(5, 1, 1, 12, 0.25, 2.5)
    assert list(alloc.counts) == [1, 1, 2, 2, 2, 1, 1, 1, 1]
    assert alloc.counts.sum() == 12
    # clamped rates fall off monotonically toward high frequencies
    assert all(np.diff(alloc.rates) <= 1e-12)


def test_allocate_inverse_scheme_handles_beta_below_one():
    # x=1 at the top band makes the raw density infinite for beta < 1;
    # that band must clamp to rate 1 rather than poison the normalizer
    alloc = hashing.allocate_buckets(5, 1, 1, 12, 2.5, 0.25)
    assert alloc.counts.sum() == 12
    assert alloc.rates[-1] == 1.0
    assert all(np.diff(alloc.rates) >= -1e-12)


def test_allocate_errors():
    with pytest.raises(AllocationError, match="insufficient budget"):
        hashing.allocate_buckets(5, 1, 1, 8, 1.0, 1.0)
    with pytest.raises(AllocationError, match="exceeds 1"):
        hashing.allocate_buckets(3, 1, 1, 10, 1.0, 1.0)
    with pytest.raises(ConfigError):
        hashing.allocate_buckets(3, 1, 1, 9, 0.0, 1.0)
    with pytest.raises(ConfigError):
        hashing.allocate_buckets(3, 1, 1, 9, 1.0, -2.0)


def test_allocate_matches_oracle_on_random_tuples():
    rng = np.random.default_rng(99)
    for _ in range(60):
        d = int(rng.integers(1, 8))
        m = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        lo, hi = 2 * d - 1, m * n * d * d
        k = int(rng.integers(lo, hi + 1))
        alpha = float(rng.uniform(0.05, 3.0))
        beta = float(rng.uniform(0.05, 3.0))
        alloc = hashing.allocate_buckets(d, m, n, k, alpha, beta)
        counts, rates = oracle_allocate(d, m, n, k, alpha, beta)
        assert list(alloc.counts) == counts, (d, m, n, k, alpha, beta)
        np.testing.assert_allclose(alloc.rates, rates, atol=1e-9)


def test_inner_product_preserved_in_expectation():
    # sanity-scale version of the acceptance Monte-Carlo
    rng = np.random.default_rng(11)
    dim, k, trials = 100, 20, 2000
    x, y = rng.normal(size=dim), rng.normal(size=dim)
    idx = np.arange(dim)
    zeros = np.zeros(dim)
    estimates = np.empty(trials)
    for t in range(trials):
        rows = hashing.encode_keys(t, zeros, zeros, idx, zeros)
        buckets = (hashing.bucket_hash_batch(rows) % np.uint64(k)).astype(int)
        signs = hashing.sign_batch(rows)
        phi_x = np.bincount(buckets, weights=signs * x, minlength=k)
        phi_y = np.bincount(buckets, weights=signs * y, minlength=k)
        estimates[t] = phi_x @ phi_y
    se = estimates.std(ddof=1) / np.sqrt(trials)
    assert abs(estimates.mean() - x @ y) < 4 * se


def test_derive_layer_seed_spreads():
    seeds = {hashing.derive_layer_seed(42, i) for i in range(16)}
    assert len(seeds) == 16
