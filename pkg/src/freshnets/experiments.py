"""Desk-scale experiment protocol: subset selection, feasibility overrides,
and the compression trend runs.

These helpers exist so the long-running comparisons (reference CNN vs the
compressed variants at several rates and band-rate schemes) are one call
both for the verification suite and for the demo scripts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import netspec, training
from .netspec import Compression, LayerSpec, NetworkSpec

SUBSET_SEED = 7
DEFAULT_DATA_DIR = os.path.join(
    os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))),
    "data", "mnist",
)

_CONV_MIN = {
    # minimum stored weights a method needs for a (m, n, d) conv layer
    "fresh": lambda m, n, d: 2 * d - 1,
    "hashed_spatial": lambda m, n, d: 1,
    "dropfreq": lambda m, n, d: m * n,
    "lrd": lambda m, n, d: m * d * d + n,
}


def load_trend_dataset(data_dir=None, n_train=7000, n_val=1000, n_test=2000,
                       seed=SUBSET_SEED) -> training.Dataset:
    """Fixed seed-selected digit subsets, normalized by train statistics."""
    data_dir = data_dir or DEFAULT_DATA_DIR
    arrays = training.load_mnist_arrays(data_dir)
    train_x = arrays["train_images"][:, None, :, :]
    test_x = arrays["test_images"][:, None, :, :]
    pool = train_x.shape[0]
    if n_train + n_val > pool or n_test > test_x.shape[0]:
        raise training.ConfigError(
            f"requested {n_train}+{n_val} train/val of {pool} and {n_test} "
            f"test of {test_x.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(pool)
    train_idx = perm[:n_train]
    val_idx = perm[n_train : n_train + n_val]
    test_idx = rng.permutation(test_x.shape[0])[:n_test]
    raw = training.Dataset(
        train_images=train_x[train_idx],
        train_labels=arrays["train_labels"][train_idx],
        val_images=train_x[val_idx],
        val_labels=arrays["train_labels"][val_idx],
        test_images=test_x[test_idx],
        test_labels=arrays["test_labels"][test_idx],
        num_classes=10,
    )
    return training.normalize(raw)


def with_feasible_conv_rates(spec: NetworkSpec, method: str,
                             rate: float) -> NetworkSpec:
    """Raise per-layer rates to each method's minimum where needed.

    Small layers can fall below a method's floor at aggressive rates (a
    frequency-banded layer needs one bucket per band, for example). Those
    layers get a compression_override pinning the smallest feasible rate;
    the same override applies to whichever method is built from the
    returned spec, keeping budgets comparable across methods.
    """
    floor = _CONV_MIN.get(method)
    if floor is None:
        return spec
    out = []
    changed = False
    for entry in spec.layers:
        if entry.kind != "conv":
            out.append(entry)
            continue
        m, n, d = entry.in_planes, entry.out_planes, entry.filter_size
        virtual = m * n * d * d
        need = floor(m, n, d)
        if int(np.ceil(rate * virtual)) < need:
            override = dict(entry.compression_override or {})
            override["rate"] = need / virtual
            entry = LayerSpec(entry.kind, entry.in_planes, entry.out_planes,
                              entry.filter_size, entry.ops, override)
            changed = True
        out.append(entry)
    if not changed:
        return spec
    return NetworkSpec(spec.input_size, tuple(out), spec.dropout_rate)


@dataclass
class TrendRun:
    method: str
    rate: float
    alpha: float
    beta: float
    seed: int
    test_error: float
    test_loss: float
    val_error: float
    epochs_run: int
    network: object


def run_trend(dataset: training.Dataset, method="none", rate=1.0, alpha=1.0,
              beta=1.0, seed=0, epochs=15, learning_rate=0.01,
              spec: NetworkSpec | None = None) -> TrendRun:
    """Train the desk net with one compression setting and score the test set."""
    spec = spec or netspec.mnist_desk_spec()
    spec = with_feasible_conv_rates(spec, method, rate)
    comp = Compression(method=method, rate=rate, alpha=alpha, beta=beta)
    cfg = training.TrainConfig(
        learning_rate=learning_rate,
        max_epochs=epochs,
        patience=epochs,  # keep all epochs; best-val weights still win
        seed=seed,
        compression=comp,
    )
    network = netspec.build(spec, comp, master_seed=seed)
    result = training.train(network, dataset, cfg)
    test_error, test_loss = training.evaluate(
        network, dataset.test_images, dataset.test_labels
    )
    return TrendRun(
        method=method, rate=rate, alpha=alpha, beta=beta, seed=seed,
        test_error=test_error, test_loss=test_loss,
        val_error=result.best_val_error, epochs_run=result.epochs_run,
        network=network,
    )


def mean_test_error(runs) -> float:
    return float(np.mean([r.test_error for r in runs]))
