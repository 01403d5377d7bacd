"""Layer objects and the network container.

Every parameterized layer exposes the same small surface:

    forward(x, train=False, rng=None) -> y      caches what backward needs
    backward(grad_out) -> grad_in               fills the layer's grad arrays
    params() / grads()                          aligned lists of ndarrays
    weight_count / bias_count                   trainable scalar accounting

The trainer is the single writer of parameters; forward/backward touch only
the per-call cache, so evaluation over disjoint batches may run in parallel
as long as updates do not interleave with it.
"""

from __future__ import annotations

import numpy as np

from . import tensor_core as tc
from .errors import ShapeError
from .hashing import hash64


def init_rng(layer_seed: int, label: bytes = b"init") -> np.random.Generator:
    """Deterministic init stream derived from the layer seed."""
    import struct

    return np.random.default_rng(
        hash64(struct.pack("<Q", layer_seed & ((1 << 64) - 1)) + label)
    )


class ConvLayerBase:
    """Shared forward/backward for conv layers that materialize filters.

    Subclasses store their own parameterization and implement
    ``materialize()`` (build the (n, m, d, d) filter bank) and
    ``apply_filter_grad(dfilters)`` (map the spatial filter-bank gradient
    onto the stored parameters' grad arrays). The filter bank is
    reconstructed once per forward pass and reused by backward.
    """

    method = "dense"

    def __init__(self, m: int, n: int, d: int):
        self.m = m
        self.n = n
        self.d = d
        self.bias = np.zeros(n)
        self.bias_grad = np.zeros(n)
        self.need_input_grad = True
        self._cache = None

    # -- subclass API -------------------------------------------------
    def materialize(self) -> np.ndarray:
        raise NotImplementedError

    def apply_filter_grad(self, dfilters: np.ndarray):
        raise NotImplementedError

    def weight_params(self) -> list[np.ndarray]:
        raise NotImplementedError

    def weight_grads(self) -> list[np.ndarray]:
        raise NotImplementedError

    # -- common surface -----------------------------------------------
    def forward(self, x, train=False, rng=None):
        filters = self.materialize()
        out, cols = tc.conv2d_same_cols(x, filters, self.bias)
        self._cache = (x, filters, cols)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise ShapeError("backward called without a forward pass")
        x, filters, cols = self._cache
        dx, dfilters, dbias = tc.conv2d_same_backward(
            grad_out, x, filters, cols=cols,
            need_input_grad=self.need_input_grad,
        )
        self._cache = None
        self.bias_grad[:] = dbias
        self.apply_filter_grad(dfilters)
        return dx

    def params(self):
        return self.weight_params() + [self.bias]

    def grads(self):
        return self.weight_grads() + [self.bias_grad]

    @property
    def weight_count(self) -> int:
        return int(sum(p.size for p in self.weight_params()))

    @property
    def bias_count(self) -> int:
        return self.bias.size

    @property
    def virtual_weight_count(self) -> int:
        """Size of the uncompressed filter bank this layer stands in for."""
        return self.m * self.n * self.d * self.d


class DenseConv(ConvLayerBase):
    """Ordinary uncompressed convolution layer."""

    method = "dense"

    def __init__(self, m, n, d, layer_seed=0, init=True):
        super().__init__(m, n, d)
        self.layer_seed = layer_seed
        self.filters = np.zeros((n, m, d, d))
        self.filters_grad = np.zeros_like(self.filters)
        if init:
            fan = m * d * d, n * d * d
            self.filters[:] = tc.glorot_uniform(
                self.filters.shape, fan[0], fan[1], init_rng(layer_seed)
            )

    def materialize(self):
        return self.filters

    def apply_filter_grad(self, dfilters):
        self.filters_grad[:] = dfilters

    def weight_params(self):
        return [self.filters]

    def weight_grads(self):
        return [self.filters_grad]


class ConvBlock:
    """A conv layer followed by its pooling/dropout/activation ops, in order."""

    def __init__(self, conv, ops=(), dropout_rate=0.5):
        for op in ops:
            if op not in ("MP", "DO", "RL"):
                raise ShapeError(f"unknown block op {op!r}")
        self.conv = conv
        self.ops = tuple(ops)
        self.dropout_rate = dropout_rate
        self._cache = None

    def forward(self, x, train=False, rng=None):
        x = self.conv.forward(x, train, rng)
        trace = []
        for op in self.ops:
            if op == "MP":
                trace.append(("MP", x))
                x = tc.maxpool2(x)
            elif op == "DO":
                x, mask = tc.dropout(x, self.dropout_rate, rng, train)
                trace.append(("DO", mask))
            else:
                trace.append(("RL", x))
                x = tc.relu(x)
        self._cache = trace
        return x

    def backward(self, grad):
        for op, saved in reversed(self._cache):
            if op == "MP":
                grad = tc.maxpool2_backward(grad, saved)
            elif op == "DO":
                grad = tc.dropout_backward(grad, saved)
            else:
                grad = tc.relu_backward(grad, saved)
        return self.conv.backward(grad)

    def params(self):
        return self.conv.params()

    def grads(self):
        return self.conv.grads()


class FcBlock:
    """A fully-connected layer (flattening 4-D input) plus optional DO/RL ops."""

    def __init__(self, fc, ops=(), dropout_rate=0.5):
        for op in ops:
            if op not in ("DO", "RL"):
                raise ShapeError(f"op {op!r} not supported after fc")
        self.fc = fc
        self.ops = tuple(ops)
        self.dropout_rate = dropout_rate
        self._cache = None

    def forward(self, x, train=False, rng=None):
        in_shape = x.shape
        if x.ndim == 4:
            x = x.reshape(x.shape[0], -1)
        x = self.fc.forward(x, train, rng)
        trace = []
        for op in self.ops:
            if op == "DO":
                x, mask = tc.dropout(x, self.dropout_rate, rng, train)
                trace.append(("DO", mask))
            else:
                trace.append(("RL", x))
                x = tc.relu(x)
        self._cache = (in_shape, trace)
        return x

    def backward(self, grad):
        in_shape, trace = self._cache
        for op, saved in reversed(trace):
            if op == "DO":
                grad = tc.dropout_backward(grad, saved)
            else:
                grad = tc.relu_backward(grad, saved)
        grad = self.fc.backward(grad)
        return grad.reshape(in_shape)

    def params(self):
        return self.fc.params()

    def grads(self):
        return self.fc.grads()


class Network:
    """An ordered stack of blocks ending in class logits."""

    def __init__(self, blocks, spec=None, compression=None):
        self.blocks = list(blocks)
        self.spec = spec
        self.compression = compression
        first_conv = next(
            (b.conv for b in self.blocks if isinstance(b, ConvBlock)), None
        )
        if first_conv is not None:
            first_conv.need_input_grad = False

    def forward_logits(self, x, train=False, rng=None):
        for block in self.blocks:
            x = block.forward(x, train, rng)
        return x

    def loss_and_backward(self, x, labels, train=True, rng=None):
        """One forward/backward pass; returns (mean loss, error rate)."""
        logits = self.forward_logits(x, train, rng)
        loss, dlogits = tc.softmax_xent(logits, labels)
        errors = (logits.argmax(axis=1) != labels).mean()
        grad = dlogits
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        return loss, errors

    def params(self):
        out = []
        for block in self.blocks:
            out.extend(block.params())
        return out

    def grads(self):
        out = []
        for block in self.blocks:
            out.extend(block.grads())
        return out

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))

    def layer_objects(self):
        """The parameterized layer of each block, in network order."""
        return [
            b.conv if isinstance(b, ConvBlock) else b.fc for b in self.blocks
        ]

    def conv_layers(self):
        return [b.conv for b in self.blocks if isinstance(b, ConvBlock)]

    def snapshot(self):
        return [p.copy() for p in self.params()]

    def restore(self, snapshot):
        for p, s in zip(self.params(), snapshot):
            p[:] = s
