"""Declarative architecture description and the network builder.

A NetworkSpec lists layer entries (conv or fc) with their plane counts,
filter sizes and post-ops. ``build`` turns a spec plus a compression
choice into a concrete layer stack. Fully-connected layers are always
hash-compressed at the configured rate, whatever the conv method is, so a
"none" build is the reference CNN with a hashed top layer.

Specs serialize to a stable JSON form (sorted keys, no whitespace) which is
also what the model file embeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .hashing import derive_layer_seed
from .layers import ConvBlock, DenseConv, FcBlock, Network

_METHODS = ("none", "fresh", "hashed_spatial", "dropfreq", "dropfilt", "lrd")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" or "fc"
    in_planes: int
    out_planes: int
    filter_size: int = 0
    ops: tuple = ()
    compression_override: dict | None = None

    def to_dict(self):
        d = {
            "kind": self.kind,
            "in_planes": self.in_planes,
            "out_planes": self.out_planes,
            "ops": list(self.ops),
        }
        if self.kind == "conv":
            d["filter_size"] = self.filter_size
        if self.compression_override:
            d["compression_override"] = dict(self.compression_override)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            in_planes=int(d["in_planes"]),
            out_planes=int(d["out_planes"]),
            filter_size=int(d.get("filter_size", 0)),
            ops=tuple(d.get("ops", ())),
            compression_override=d.get("compression_override"),
        )


@dataclass(frozen=True)
class NetworkSpec:
    input_size: tuple
    layers: tuple
    dropout_rate: float = 0.5

    def validate(self):
        if not self.layers:
            raise ConfigError("network spec has no layers")
        rows, cols = self.input_size
        planes = self.layers[0].in_planes
        flat = False
        for i, entry in enumerate(self.layers):
            where = f"layer {i} ({entry.kind} {entry.in_planes}->{entry.out_planes})"
            if entry.kind == "conv":
                if flat:
                    raise ConfigError(f"{where}: conv after fc is not supported")
                if entry.in_planes != planes:
                    raise ConfigError(
                        f"{where}: expects {entry.in_planes} input planes, "
                        f"previous layer leaves {planes}"
                    )
                if entry.filter_size < 1 or entry.filter_size % 2 == 0:
                    raise ConfigError(
                        f"{where}: filter size must be odd and positive, "
                        f"got {entry.filter_size}"
                    )
                for op in entry.ops:
                    if op not in ("MP", "DO", "RL"):
                        raise ConfigError(f"{where}: unknown op {op!r}")
                    if op == "MP":
                        if rows % 2 or cols % 2:
                            raise ConfigError(
                                f"{where}: cannot pool odd map size {rows}x{cols}"
                            )
                        rows //= 2
                        cols //= 2
                planes = entry.out_planes
            elif entry.kind == "fc":
                expected = planes if flat else planes * rows * cols
                if entry.in_planes != expected:
                    raise ConfigError(
                        f"{where}: fc input size {entry.in_planes} does not "
                        f"match incoming {expected} "
                        f"({planes} planes x {rows}x{cols})"
                    )
                for op in entry.ops:
                    if op not in ("DO", "RL"):
                        raise ConfigError(f"{where}: unknown fc op {op!r}")
                planes = entry.out_planes
                flat = True
            else:
                raise ConfigError(f"{where}: unknown layer kind {entry.kind!r}")
        return self

    def to_dict(self):
        return {
            "input_size": list(self.input_size),
            "dropout_rate": self.dropout_rate,
            "layers": [e.to_dict() for e in self.layers],
        }

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, no whitespace."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_size=tuple(d["input_size"]),
            layers=tuple(LayerSpec.from_dict(e) for e in d["layers"]),
            dropout_rate=float(d.get("dropout_rate", 0.5)),
        ).validate()

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Compression:
    method: str = "none"
    rate: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    use_sign: bool = True

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ConfigError(
                f"unknown compression method {self.method!r}; "
                f"choose from {_METHODS}"
            )
        if not 0.0 < self.rate <= 1.0:
            raise ConfigError(f"compression rate must be in (0, 1], got {self.rate}")

    def to_dict(self):
        return {
            "method": self.method,
            "rate": self.rate,
            "alpha": self.alpha,
            "beta": self.beta,
            "use_sign": self.use_sign,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            method=d.get("method", "none"),
            rate=float(d.get("rate", 1.0)),
            alpha=float(d.get("alpha", 1.0)),
            beta=float(d.get("beta", 1.0)),
            use_sign=bool(d.get("use_sign", True)),
        )

    def overridden(self, override: dict | None):
        if not override:
            return self
        known = {k: v for k, v in override.items() if k in
                 ("method", "rate", "alpha", "beta", "use_sign")}
        return replace(self, **known)


def mnist_desk_spec(num_classes: int = 10) -> NetworkSpec:
    """Small two-conv network for 28x28 grayscale digits."""
    return NetworkSpec(
        input_size=(28, 28),
        layers=(
            LayerSpec("conv", 1, 16, 5, ("MP", "RL")),
            LayerSpec("conv", 16, 32, 5, ("MP", "RL")),
            LayerSpec("fc", 32 * 7 * 7, num_classes),
        ),
    ).validate()


def cifar_spec(num_classes: int = 10) -> NetworkSpec:
    """Five-conv benchmark network for 32x32 three-channel images."""
    return NetworkSpec(
        input_size=(32, 32),
        layers=(
            LayerSpec("conv", 3, 32, 5, ("RL",)),
            LayerSpec("conv", 32, 64, 5, ("MP", "DO", "RL")),
            LayerSpec("conv", 64, 64, 5, ("RL",)),
            LayerSpec("conv", 64, 128, 5, ("MP", "DO", "RL")),
            LayerSpec("conv", 128, 256, 5, ("MP", "DO", "RL")),
            LayerSpec("fc", 256 * 4 * 4, num_classes),
        ),
    ).validate()


def build(spec: NetworkSpec, compression: Compression | None = None,
          master_seed: int = 0) -> Network:
    """Instantiate a network from a spec and a compression choice.

    Every layer gets a seed derived from (master_seed, layer index), so a
    given (spec, compression, seed) triple always builds the same network.
    Conv budgets are ceil(rate * m*n*d*d) per layer; infeasible budgets
    raise a ConfigError naming the layer.
    """
    from .baselines import DropFreqConv, LrdConv, SpatialHashedConv, dropfilt_spec
    from .fresh_layer import FreshConv, HashedFC

    compression = compression or Compression()
    spec.validate()
    if compression.method == "dropfilt":
        spec = dropfilt_spec(spec, compression.rate).validate()

    blocks = []
    for index, entry in enumerate(spec.layers):
        comp = compression.overridden(entry.compression_override)
        seed = derive_layer_seed(master_seed, index)
        where = f"layer {index} ({entry.kind} {entry.in_planes}->{entry.out_planes})"
        if entry.kind == "fc":
            k = math.ceil(comp.rate * entry.in_planes * entry.out_planes)
            fc = HashedFC(entry.in_planes, entry.out_planes, k,
                          layer_seed=seed, use_sign=comp.use_sign)
            blocks.append(FcBlock(fc, entry.ops, spec.dropout_rate))
            continue

        m, n, d = entry.in_planes, entry.out_planes, entry.filter_size
        method = comp.method
        if method in ("none", "dropfilt"):
            conv = DenseConv(m, n, d, layer_seed=seed)
        else:
            k = math.ceil(comp.rate * m * n * d * d)
            try:
                if method == "fresh":
                    conv = FreshConv(m, n, d, k, comp.alpha, comp.beta,
                                     layer_seed=seed, use_sign=comp.use_sign)
                elif method == "hashed_spatial":
                    conv = SpatialHashedConv(m, n, d, k, layer_seed=seed,
                                             use_sign=comp.use_sign)
                elif method == "dropfreq":
                    conv = DropFreqConv(m, n, d, k, layer_seed=seed)
                elif method == "lrd":
                    conv = LrdConv(m, n, d, k, layer_seed=seed)
                else:
                    raise ConfigError(f"method {method!r} not buildable")
            except ConfigError as exc:
                raise ConfigError(
                    f"{where}: rate {comp.rate} is infeasible for "
                    f"{method}: {exc}"
                ) from exc
        blocks.append(ConvBlock(conv, entry.ops, spec.dropout_rate))

    return Network(blocks, spec=spec, compression=compression)
