"""Deterministic hashing and frequency-band bucket allocation.

Weight sharing is driven by two hash functions derived from one FNV-1a 64
primitive through domain separation: a bucket hash (leading tag byte 0x01)
that maps a coefficient key to a slot of the shared weight vector, and a
sign hash (leading tag byte 0x02) that attaches a +-1 factor so inner
products are preserved in expectation. Raw FNV output is passed through
the splitmix64 finalizer before use; without it the sign bit and bucket
residues carry enough input structure to bias shared-weight inner products.

The key encoding is a bit-exact external contract: the domain tag byte,
then little-endian u64 layer seed, then the four u32 indices (k, l, j1,
j2), 25 bytes total, hashed as FNV-1a 64 and finalized with splitmix64.
Any implementation reproducing these steps reconstructs identical weight
assignments from a serialized model.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import AllocationError, ConfigError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x00000100000001B3
_MASK64 = (1 << 64) - 1

_BUCKET_TAG = b"\x01"
_SIGN_TAG = b"\x02"

_MIX_M1 = 0xBF58476D1CE4E5B9
_MIX_M2 = 0x94D049BB133111EB


def hash64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def mix64(h: int) -> int:
    """splitmix64 avalanche finalizer.

    FNV-1a alone is too linear for weight sharing: its low bit is the
    input-byte parity and counter-structured keys land on output lattices,
    both of which bias hash-shared inner products. Finalizing with this
    standard xorshift-multiply chain gives every output bit full avalanche
    while staying trivially portable.
    """
    h &= _MASK64
    h = ((h ^ (h >> 30)) * _MIX_M1) & _MASK64
    h = ((h ^ (h >> 27)) * _MIX_M2) & _MASK64
    return h ^ (h >> 31)


def hash64_batch(rows: np.ndarray) -> np.ndarray:
    """FNV-1a 64 over each row of a uint8 matrix; returns uint64 per row.

    Equivalent to ``hash64`` applied row-wise but vectorized; uint64
    multiplication wraps modulo 2**64 which is exactly the FNV update.
    """
    rows = np.ascontiguousarray(rows, dtype=np.uint8)
    h = np.full(rows.shape[0], FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    for col in range(rows.shape[1]):
        h ^= rows[:, col].astype(np.uint64)
        h *= prime
    return h


def mix64_batch(h: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer over a uint64 array."""
    h = h.astype(np.uint64, copy=True)
    h ^= h >> np.uint64(30)
    h *= np.uint64(_MIX_M1)
    h ^= h >> np.uint64(27)
    h *= np.uint64(_MIX_M2)
    return h ^ (h >> np.uint64(31))


@dataclass(frozen=True)
class HashKey:
    """Identifies one virtual weight: layer seed plus four coefficient indices."""

    layer_seed: int
    k: int
    l: int
    j1: int
    j2: int

    def encode(self) -> bytes:
        return struct.pack(
            "<QIIII", self.layer_seed & _MASK64, self.k, self.l, self.j1, self.j2
        )


def bucket_index(key: HashKey, k_band: int) -> int:
    """Map a key into {0..k_band-1} via the tagged bucket hash.

    The domain tag leads the byte stream so the bucket and sign states
    diverge at the first FNV round and then mix through the whole key; a
    trailing tag would leave the two hashes one multiply apart, which
    measurably couples bucket choice and sign.
    """
    if k_band < 1:
        raise AllocationError(f"bucket count must be >= 1, got {k_band}")
    return mix64(hash64(_BUCKET_TAG + key.encode())) % k_band


def sign_hash(key: HashKey) -> int:
    """Return +1 or -1 from the tagged sign hash.

    The decision bit is the top bit of the finalized hash; domain
    separation from the bucket hash comes from the leading tag byte.
    """
    return 1 if mix64(hash64(_SIGN_TAG + key.encode())) >> 63 == 0 else -1


def encode_keys(layer_seed: int, k, l, j1, j2) -> np.ndarray:
    """Build the 25-byte (key + bucket tag placeholder stripped) rows for many keys.

    The four index arguments are broadcast against each other; the result is
    a uint8 matrix with one 24-byte encoded key per row, matching
    ``HashKey.encode`` byte for byte.
    """
    k, l, j1, j2 = np.broadcast_arrays(
        np.asarray(k, dtype=np.uint32),
        np.asarray(l, dtype=np.uint32),
        np.asarray(j1, dtype=np.uint32),
        np.asarray(j2, dtype=np.uint32),
    )
    count = k.size
    rows = np.empty((count, 24), dtype=np.uint8)
    seed_bytes = np.frombuffer(
        struct.pack("<Q", layer_seed & _MASK64), dtype=np.uint8
    )
    rows[:, 0:8] = seed_bytes
    for off, arr in ((8, k), (12, l), (16, j1), (20, j2)):
        rows[:, off : off + 4] = (
            arr.reshape(count).astype("<u4").view(np.uint8).reshape(count, 4)
        )
    return rows


def _tagged(rows: np.ndarray, tag: bytes) -> np.ndarray:
    out = np.empty((rows.shape[0], rows.shape[1] + 1), dtype=np.uint8)
    out[:, 0] = tag[0]
    out[:, 1:] = rows
    return out


def bucket_hash_batch(rows: np.ndarray) -> np.ndarray:
    """Finalized bucket-hash values (before modulo) for encoded key rows."""
    return mix64_batch(hash64_batch(_tagged(rows, _BUCKET_TAG)))


def sign_batch(rows: np.ndarray) -> np.ndarray:
    """+-1 sign factors for encoded key rows, as float64."""
    bits = mix64_batch(hash64_batch(_tagged(rows, _SIGN_TAG))) >> np.uint64(63)
    return 1.0 - 2.0 * bits.astype(np.float64)


def band_of(j1: int, j2: int) -> int:
    """Frequency band of coefficient (j1, j2): the index sum j1 + j2."""
    return j1 + j2


def band_sizes(d: int, m: int, n: int) -> np.ndarray:
    """Virtual coefficient count N_j per band for an (n, m, d, d) filter bank."""
    j = np.arange(2 * d - 1)
    return m * n * (d - np.abs(j - (d - 1)))


@dataclass(frozen=True)
class BandAllocation:
    """Bucket budget split across the 2d-1 frequency bands of a layer."""

    d: int
    k_total: int
    alpha: float
    beta: float
    counts: np.ndarray  # K_j, one per band
    sizes: np.ndarray  # N_j, one per band
    rates: np.ndarray  # clamped per-band compression rates r_j

    @property
    def offsets(self) -> np.ndarray:
        """Start of each band's sub-vector in the flat weight vector."""
        return np.concatenate(([0], np.cumsum(self.counts[:-1])))


def _band_density(d: int, alpha: float, beta: float) -> np.ndarray:
    """Unnormalized beta density at the rescaled band positions x=(j+1)/(2d-1).

    x reaches exactly 1 at the highest band; there the density is 0 for
    beta > 1 and infinite for beta < 1. The infinite case is treated as a
    rate clamped to 1 by the waterfilling pass below.
    """
    nb = 2 * d - 1
    x = (np.arange(nb, dtype=np.float64) + 1.0) / nb
    with np.errstate(divide="ignore"):
        f = x ** (alpha - 1.0) * (1.0 - x) ** (beta - 1.0)
    if beta == 1.0:
        f[-1] = 1.0
    return f


def allocate_buckets(
    d: int, m: int, n: int, k_total: int, alpha: float, beta: float
) -> BandAllocation:
    """Split a bucket budget across frequency bands by a beta-shaped rate curve.

    Deterministic: raw band weights f_j are scaled by Z so the implied
    bucket total meets the budget, rates are clamped to (0, 1] with
    iterative renormalization over the unclamped bands, and the final
    integer counts are fixed up by largest-remainder rounding subject to
    1 <= K_j <= N_j and an exact total of k_total.
    """
    if alpha <= 0 or beta <= 0:
        raise ConfigError(f"alpha and beta must be positive, got ({alpha}, {beta})")
    nb = 2 * d - 1
    sizes = band_sizes(d, m, n)
    total_virtual = int(sizes.sum())
    if k_total < nb:
        raise AllocationError(
            f"insufficient budget for per-band hashing: K={k_total} < {nb} bands"
        )
    if k_total > total_virtual:
        raise AllocationError(
            f"compression rate exceeds 1: K={k_total} > {total_virtual} coefficients"
        )

    f = _band_density(d, alpha, beta)
    rates = np.zeros(nb)
    clamped = np.isinf(f)
    rates[clamped] = 1.0
    while True:
        free = ~clamped
        if not free.any():
            break
        budget = k_total - float(sizes[clamped].sum())
        denom = float((f[free] * sizes[free]).sum())
        if budget <= 0 or denom == 0:
            rates[free] = 0.0
            break
        z = budget / denom
        newly = free & (z * f > 1.0)
        if not newly.any():
            rates[free] = z * f[free]
            break
        rates[newly] = 1.0
        clamped |= newly

    target = rates * sizes
    counts = np.floor(target).astype(np.int64)
    frac = target - np.floor(target)
    np.clip(counts, 1, sizes, out=counts)

    while counts.sum() < k_total:
        order = sorted(range(nb), key=lambda j: (-frac[j], j))
        for j in order:
            if counts.sum() == k_total:
                break
            if counts[j] < sizes[j]:
                counts[j] += 1
    while counts.sum() > k_total:
        order = sorted(range(nb), key=lambda j: (frac[j], -j))
        for j in order:
            if counts.sum() == k_total:
                break
            if counts[j] > 1:
                counts[j] -= 1

    counts.setflags(write=False)
    sizes.setflags(write=False)
    rates.setflags(write=False)
    return BandAllocation(
        d=d,
        k_total=k_total,
        alpha=alpha,
        beta=beta,
        counts=counts,
        sizes=sizes,
        rates=rates,
    )


def derive_layer_seed(master_seed: int, layer_index: int) -> int:
    """Per-layer seed: FNV-1a of the master seed and the layer position."""
    return hash64(struct.pack("<QI", master_seed & _MASK64, layer_index))
