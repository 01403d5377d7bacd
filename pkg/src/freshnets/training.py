"""Mini-batch SGD with momentum, early stopping, and dataset handling.

Training is deterministic given (config.seed, deterministic flag): epoch
shuffles, dropout masks and parameter updates all draw from one seeded
generator in a fixed order. With the deterministic flag set the wall-time
field of emitted metric records is zeroed so reruns produce bit-identical
logs.
"""

from __future__ import annotations

import gzip
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ModelFormatError, TrainingDiverged
from .netspec import Compression

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class TrainConfig:
    batch_size: int = 64
    momentum: float = 0.9
    learning_rate: float = 0.01
    max_epochs: int = 20
    patience: int = 5
    val_fraction: float = 0.2
    seed: int = 0
    deterministic: bool = True
    compression: Compression = field(default_factory=Compression)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(
                f"val_fraction must be in (0, 1), got {self.val_fraction}"
            )
        if isinstance(self.compression, dict):
            self.compression = Compression.from_dict(self.compression)

    def to_dict(self):
        return {
            "batch_size": self.batch_size,
            "momentum": self.momentum,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
            "deterministic": self.deterministic,
            "compression": self.compression.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        known = {
            k: d[k]
            for k in (
                "batch_size", "momentum", "learning_rate", "max_epochs",
                "patience", "val_fraction", "seed", "deterministic",
                "compression",
            )
            if k in d
        }
        return cls(**known)


def _open_maybe_gzip(path):
    f = open(path, "rb")
    magic = f.read(2)
    f.seek(0)
    if magic == b"\x1f\x8b":
        return gzip.open(f)
    return f


def load_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) into an ndarray.

    Image files (magic 0x00000803) come back as float64 (count, rows, cols)
    with raw 0..255 pixel values; label files (magic 0x00000801) as int64.
    """
    with _open_maybe_gzip(path) as f:
        head = f.read(4)
        if len(head) < 4:
            raise ModelFormatError(f"{path}: truncated IDX header", offset=0)
        (magic,) = struct.unpack(">I", head)
        if magic == IDX_LABELS_MAGIC:
            dims_raw = f.read(4)
            if len(dims_raw) < 4:
                raise ModelFormatError(f"{path}: truncated IDX dims", offset=4)
            (count,) = struct.unpack(">I", dims_raw)
            payload = f.read(count)
            if len(payload) < count:
                raise ModelFormatError(
                    f"{path}: expected {count} label bytes, got {len(payload)}",
                    offset=8 + len(payload),
                )
            return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
        if magic == IDX_IMAGES_MAGIC:
            dims_raw = f.read(12)
            if len(dims_raw) < 12:
                raise ModelFormatError(f"{path}: truncated IDX dims", offset=4)
            count, rows, cols = struct.unpack(">III", dims_raw)
            expected = count * rows * cols
            payload = f.read(expected)
            if len(payload) < expected:
                raise ModelFormatError(
                    f"{path}: expected {expected} pixel bytes, got {len(payload)}",
                    offset=16 + len(payload),
                )
            data = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
            return data.reshape(count, rows, cols)
        raise ModelFormatError(
            f"{path}: bad IDX magic 0x{magic:08x}", offset=0
        )


@dataclass
class Dataset:
    """Normalized train/val/test splits plus the train-split statistics."""

    train_images: np.ndarray
    train_labels: np.ndarray
    val_images: np.ndarray
    val_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    num_classes: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        for name in ("train", "val", "test"):
            images = getattr(self, f"{name}_images")
            labels = getattr(self, f"{name}_labels")
            if images.shape[0] != labels.shape[0]:
                raise ConfigError(
                    f"{name} split: {images.shape[0]} images vs "
                    f"{labels.shape[0]} labels"
                )
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ConfigError(
                    f"{name} split: label outside [0, {self.num_classes})"
                )


def normalize(dataset: Dataset) -> Dataset:
    """Scale pixels to [0, 1], then standardize per pixel by train stats.

    Statistics come from the train split only and are applied identically
    to all splits; the std floor avoids dividing by dead pixels.
    """
    train = dataset.train_images / 255.0
    mean = train.mean(axis=0, keepdims=True)
    std = np.maximum(train.std(axis=0, keepdims=True), 1e-8)

    def apply(a):
        return (a / 255.0 - mean) / std

    return Dataset(
        train_images=apply(dataset.train_images),
        train_labels=dataset.train_labels,
        val_images=apply(dataset.val_images),
        val_labels=dataset.val_labels,
        test_images=apply(dataset.test_images),
        test_labels=dataset.test_labels,
        num_classes=dataset.num_classes,
        mean=mean,
        std=std,
    )


def make_dataset(train_images, train_labels, test_images, test_labels,
                 val_fraction=0.2, seed=0, num_classes=10) -> Dataset:
    """Split off validation (last fraction of the seed-shuffled train order)
    and normalize. Images arrive as (count, rows, cols) raw pixels."""
    if train_images.ndim == 3:
        train_images = train_images[:, None, :, :]
    if test_images.ndim == 3:
        test_images = test_images[:, None, :, :]
    count = train_images.shape[0]
    n_val = int(round(count * val_fraction))
    if not 0 < n_val < count:
        raise ConfigError(
            f"val_fraction {val_fraction} leaves no usable split of {count}"
        )
    perm = np.random.default_rng(seed).permutation(count)
    train_idx, val_idx = perm[: count - n_val], perm[count - n_val :]
    raw = Dataset(
        train_images=train_images[train_idx],
        train_labels=train_labels[train_idx],
        val_images=train_images[val_idx],
        val_labels=train_labels[val_idx],
        test_images=test_images,
        test_labels=test_labels,
        num_classes=num_classes,
    )
    return normalize(raw)


_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def load_mnist_arrays(data_dir):
    """Raw MNIST-style IDX arrays from a directory (plain or .gz files)."""
    import os

    out = {}
    for key, stem in _MNIST_FILES.items():
        path = os.path.join(data_dir, stem)
        if not os.path.exists(path):
            path = path + ".gz"
        if not os.path.exists(path):
            raise ModelFormatError(
                f"missing IDX file {stem}[.gz] in {data_dir}"
            )
        out[key] = load_idx(path)
    return out


def sgd_step(params, grads, velocity, lr: float, momentum: float):
    """In-place heavy-ball update: v <- momentum*v - lr*g; p <- p + v."""
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v -= lr * g
        p += v


def evaluate(network, images, labels, batch_size: int = 64):
    """(error rate, mean loss) over a split, dropout in eval mode."""
    from . import tensor_core as tc

    total, wrong, loss_sum = 0, 0, 0.0
    for start in range(0, images.shape[0], batch_size):
        x = images[start : start + batch_size]
        y = labels[start : start + batch_size]
        logits = network.forward_logits(x, train=False)
        loss, _ = tc.softmax_xent(logits, y)
        loss_sum += loss * x.shape[0]
        wrong += int((logits.argmax(axis=1) != y).sum())
        total += x.shape[0]
    return wrong / total, loss_sum / total


@dataclass
class TrainResult:
    records: list
    best_val_error: float
    best_epoch: int
    epochs_run: int
    final_lr: float


def train(network, dataset: Dataset, config: TrainConfig,
          on_record=None) -> TrainResult:
    """Train a network, restoring the best-validation parameters at the end.

    Per epoch: shuffle the train split, run mini-batches, then score the
    validation split. The learning rate halves every max(1, ceil(patience/2))
    consecutive epochs without validation improvement and training stops
    once the stall exceeds ``patience``. Emits two records per epoch
    (train and val) shaped for one-JSON-object-per-line logs.
    """
    rng = np.random.default_rng(config.seed)
    params = network.params()
    velocity = [np.zeros_like(p) for p in params]
    lr = config.learning_rate
    halve_every = max(1, -(-config.patience // 2))

    records = []
    best_val = np.inf
    best_epoch = 0
    best_snapshot = network.snapshot()
    stall = 0
    epochs_run = 0

    n_train = dataset.train_images.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.monotonic()
        order = rng.permutation(n_train)
        loss_sum, err_sum = 0.0, 0.0
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, err = network.loss_and_backward(
                dataset.train_images[idx], dataset.train_labels[idx],
                train=True, rng=rng,
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"diverged: non-finite loss at epoch {epoch}; "
                    f"try a lower learning rate than {lr}"
                )
            sgd_step(params, network.grads(), velocity, lr, config.momentum)
            loss_sum += loss * idx.size
            err_sum += err * idx.size
        val_err, val_loss = evaluate(network, dataset.val_images,
                                     dataset.val_labels)
        seconds = 0.0 if config.deterministic else time.monotonic() - t0
        epochs_run = epoch
        for split, loss_v, err_v in (
            ("train", loss_sum / n_train, err_sum / n_train),
            ("val", val_loss, val_err),
        ):
            rec = {
                "epoch": epoch,
                "split": split,
                "loss": float(loss_v),
                "error": float(err_v),
                "seconds": float(seconds),
            }
            records.append(rec)
            if on_record:
                on_record(rec)

        if val_err < best_val:
            best_val = val_err
            best_epoch = epoch
            best_snapshot = network.snapshot()
            stall = 0
        else:
            stall += 1
            if stall % halve_every == 0:
                lr *= 0.5
            if stall > config.patience:
                break

    network.restore(best_snapshot)
    return TrainResult(
        records=records,
        best_val_error=float(best_val),
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        final_lr=lr,
    )
