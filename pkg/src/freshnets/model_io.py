"""Binary model file format.

Little-endian throughout:

    magic   "FRSH" (4 bytes)
    version u32
    json    u64 length + bytes: {"network": <spec>, "compression": <dict>}
            in canonical form (sorted keys, no whitespace)
    then one record per layer, in network order:
        method   u8   (0 dense conv, 1 fresh, 2 hashed spatial,
                       3 dropfreq, 4 lrd, 5 hashed fc)
        seed     u64
        alpha    f64  (0 unless fresh)
        beta     f64  (0 unless fresh)
        k_total  u64  (stored weight scalar count)
        bands    u16  (0 unless fresh)
        K_j      u64 * bands
        weights  f64 * k_total (dense conv stores the full filter bank,
                 lrd stores A then B)
        bias     f64 * output planes/units

Weight-sharing layers persist only (seed, alpha, beta, k_total) plus the
weights; bucket assignments are reconstructed from the seed, and the band
table is verified against a fresh allocation on load. Serialization is
canonical: save(load(x)) == x byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .baselines import DropFreqConv, LrdConv, SpatialHashedConv
from .errors import ModelFormatError
from .fresh_layer import FreshConv, HashedFC
from .layers import ConvBlock, DenseConv, FcBlock, Network
from .netspec import Compression, NetworkSpec

MAGIC = b"FRSH"
VERSION = 1

_TAGS = {"dense": 0, "fresh": 1, "hashed_spatial": 2, "dropfreq": 3,
         "lrd": 4, "hashed_fc": 5}
_METHOD_BY_TAG = {v: k for k, v in _TAGS.items()}


def _layer_record(layer) -> bytes:
    tag = _TAGS[layer.method]
    if isinstance(layer, FreshConv):
        alpha, beta = layer.allocation.alpha, layer.allocation.beta
        k_total = layer.k_total
        bands = [int(c) for c in layer.allocation.counts]
        weights = layer.w
    elif isinstance(layer, SpatialHashedConv):
        alpha = beta = 0.0
        k_total = layer.k_total
        bands = []
        weights = layer.w
    elif isinstance(layer, DropFreqConv):
        alpha = beta = 0.0
        k_total = layer.k_total
        bands = []
        weights = layer.coeffs.reshape(-1)
    elif isinstance(layer, LrdConv):
        alpha = beta = 0.0
        k_total = layer.k_total
        bands = []
        weights = np.concatenate([layer.a.reshape(-1), layer.b.reshape(-1)])
    elif isinstance(layer, DenseConv):
        alpha = beta = 0.0
        k_total = layer.filters.size
        bands = []
        weights = layer.filters.reshape(-1)
    elif isinstance(layer, HashedFC):
        alpha = beta = 0.0
        k_total = layer.k
        bands = []
        weights = layer.w
    else:
        raise ModelFormatError(f"cannot serialize layer type {type(layer)}")

    head = struct.pack(
        "<BQddQH", tag, layer.layer_seed & ((1 << 64) - 1),
        alpha, beta, k_total, len(bands),
    )
    band_bytes = struct.pack(f"<{len(bands)}Q", *bands) if bands else b""
    return (
        head
        + band_bytes
        + np.ascontiguousarray(weights, dtype="<f8").tobytes()
        + np.ascontiguousarray(layer.bias, dtype="<f8").tobytes()
    )


def serialize_model(network: Network) -> bytes:
    if network.spec is None:
        raise ModelFormatError("network has no spec attached; cannot serialize")
    comp = network.compression or Compression()
    blob = json.dumps(
        {"network": network.spec.to_dict(), "compression": comp.to_dict()},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    out = [MAGIC, struct.pack("<IQ", VERSION, len(blob)), blob]
    for layer in network.layer_objects():
        out.append(_layer_record(layer))
    return b"".join(out)


def save_model(path, network: Network):
    data = serialize_model(network)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise ModelFormatError(
                f"truncated model file while reading {what}", offset=self.pos
            )
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def f64_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def _rebuild_layer(tag, entry, seed, alpha, beta, k_total, bands, use_sign,
                   reader):
    if entry.kind == "fc":
        if tag != _TAGS["hashed_fc"]:
            raise ModelFormatError(
                f"fc spec entry paired with non-fc record tag {tag}"
            )
        layer = HashedFC(entry.in_planes, entry.out_planes, k_total,
                         layer_seed=seed, use_sign=use_sign, init=False)
        layer.w[:] = reader.f64_array(k_total, "fc weights")
        layer.bias[:] = reader.f64_array(entry.out_planes, "fc bias")
        return layer

    m, n, d = entry.in_planes, entry.out_planes, entry.filter_size
    method = _METHOD_BY_TAG.get(tag)
    if method == "dense":
        layer = DenseConv(m, n, d, layer_seed=seed, init=False)
        layer.filters[:] = reader.f64_array(
            m * n * d * d, "conv filters"
        ).reshape(n, m, d, d)
    elif method == "fresh":
        layer = FreshConv(m, n, d, k_total, alpha, beta, layer_seed=seed,
                          use_sign=use_sign, init=False)
        if list(layer.allocation.counts) != bands:
            raise ModelFormatError(
                "band table in file does not match the allocation derived "
                f"from (d={d}, m={m}, n={n}, K={k_total}, alpha={alpha}, "
                f"beta={beta})"
            )
        layer.w[:] = reader.f64_array(k_total, "fresh weights")
    elif method == "hashed_spatial":
        layer = SpatialHashedConv(m, n, d, k_total, layer_seed=seed,
                                  use_sign=use_sign, init=False)
        layer.w[:] = reader.f64_array(k_total, "hashed weights")
    elif method == "dropfreq":
        layer = DropFreqConv(m, n, d, k_total, layer_seed=seed, init=False)
        if layer.k_total != k_total:
            raise ModelFormatError(
                f"dropfreq weight count {k_total} is not a multiple of the "
                f"{m * n} filters"
            )
        layer.coeffs[:] = reader.f64_array(k_total, "dropfreq coeffs").reshape(
            n, m, layer.keep
        )
    elif method == "lrd":
        unit = m * d * d + n
        if k_total % unit:
            raise ModelFormatError(
                f"lrd weight count {k_total} is not divisible by {unit}"
            )
        rank = k_total // unit
        layer = LrdConv(m, n, d, k_total, layer_seed=seed, init=False,
                        rank=rank)
        layer.a[:] = reader.f64_array(m * d * d * rank, "lrd A").reshape(
            m * d * d, rank
        )
        layer.b[:] = reader.f64_array(rank * n, "lrd B").reshape(rank, n)
    else:
        raise ModelFormatError(f"unknown layer method tag {tag}")
    layer.bias[:] = reader.f64_array(n, "conv bias")
    return layer


def deserialize_model(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError("bad magic; not a model file", offset=0)
    version, blob_len = r.unpack("<IQ", "header")
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    try:
        blob = json.loads(r.take(blob_len, "spec json"))
        spec = NetworkSpec.from_dict(blob["network"])
        comp = Compression.from_dict(blob.get("compression", {}))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad embedded spec json: {exc}") from exc

    blocks = []
    for entry in spec.layers:
        tag, seed, alpha, beta, k_total, band_count = r.unpack(
            "<BQddQH", "layer record header"
        )
        bands = list(r.unpack(f"<{band_count}Q", "band table"))
        use_sign = comp.overridden(entry.compression_override).use_sign
        layer = _rebuild_layer(tag, entry, seed, alpha, beta, k_total, bands,
                               use_sign, r)
        if entry.kind == "fc":
            blocks.append(FcBlock(layer, entry.ops, spec.dropout_rate))
        else:
            blocks.append(ConvBlock(layer, entry.ops, spec.dropout_rate))
    if r.pos != len(data):
        raise ModelFormatError(
            f"{len(data) - r.pos} trailing bytes after last layer",
            offset=r.pos,
        )
    return Network(blocks, spec=spec, compression=comp)


def load_model(path) -> Network:
    with open(path, "rb") as f:
        return deserialize_model(f.read())
