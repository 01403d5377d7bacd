"""Command-line surface: train, eval, inspect, selftest.

Config files are JSON with three sections:

    {"network": <NetworkSpec dict>,
     "train": <TrainConfig dict>,
     "compression": {"method": ..., "rate": ..., "alpha": ..., "beta": ...}}

``train`` writes the binary model plus a JSONL metric log next to it;
``eval`` prints test error and loss as JSON; ``inspect`` exports one PGM
image per filter of a conv layer plus a JSON sidecar with scaling and
smoothness data; ``selftest`` runs quick built-in checks.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import model_io, netspec, training
from .errors import FreshnetsError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _load_config(path):
    with open(path) as f:
        raw = json.load(f)
    spec = netspec.NetworkSpec.from_dict(raw["network"])
    cfg = training.TrainConfig.from_dict(raw.get("train", {}))
    if "compression" in raw:
        cfg.compression = netspec.Compression.from_dict(raw["compression"])
    return spec, cfg


def _apply_overrides(cfg, args):
    comp = cfg.compression
    updates = {}
    for name in ("method", "rate", "alpha", "beta"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if updates:
        comp = netspec.Compression.from_dict({**comp.to_dict(), **updates})
    cfg.compression = comp
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "deterministic", False):
        cfg.deterministic = True
    return cfg


def cmd_train(args) -> int:
    spec, cfg = _load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if not os.path.isdir(args.data_dir):
        print(f"error: data directory not found: {args.data_dir}",
              file=sys.stderr)
        return EXIT_USAGE

    arrays = training.load_mnist_arrays(args.data_dir)
    dataset = training.make_dataset(
        arrays["train_images"], arrays["train_labels"],
        arrays["test_images"], arrays["test_labels"],
        val_fraction=cfg.val_fraction, seed=cfg.seed,
        num_classes=spec.layers[-1].out_planes,
    )
    network = netspec.build(spec, cfg.compression, master_seed=cfg.seed)
    result = training.train(network, dataset, cfg)
    model_io.save_model(args.out, network)
    log_path = args.log or args.out + ".metrics.jsonl"
    with open(log_path, "w") as f:
        for rec in result.records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    test_err, test_loss = training.evaluate(
        network, dataset.test_images, dataset.test_labels
    )
    print(json.dumps({
        "model": args.out,
        "log": log_path,
        "best_epoch": result.best_epoch,
        "val_error": result.best_val_error,
        "test_error": test_err,
        "test_loss": test_loss,
    }, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    if not os.path.isdir(args.data_dir):
        print(f"error: data directory not found: {args.data_dir}",
              file=sys.stderr)
        return EXIT_USAGE
    network = model_io.load_model(args.model)
    arrays = training.load_mnist_arrays(args.data_dir)
    dataset = training.make_dataset(
        arrays["train_images"], arrays["train_labels"],
        arrays["test_images"], arrays["test_labels"],
        val_fraction=0.2, seed=args.seed or 0,
        num_classes=network.spec.layers[-1].out_planes,
    )
    error, loss = training.evaluate(
        network, dataset.test_images, dataset.test_labels
    )
    print(json.dumps({
        "error": error, "loss": loss,
        "samples": int(dataset.test_labels.shape[0]),
    }, sort_keys=True))
    return EXIT_OK


def write_pgm(path, image: np.ndarray):
    """Write a 2-D uint8 array as binary PGM (P5, maxval 255)."""
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def scale_to_bytes(filt: np.ndarray) -> np.ndarray:
    """Min-max scale one filter matrix to 0..255; flat filters map to 128."""
    lo, hi = float(filt.min()), float(filt.max())
    if hi <= lo:
        return np.full(filt.shape, 128, dtype=np.uint8)
    return np.round((filt - lo) / (hi - lo) * 255.0).astype(np.uint8)


def smoothness_score(filt: np.ndarray) -> float:
    """Mean |difference| between horizontally and vertically adjacent weights."""
    dh = np.abs(np.diff(filt, axis=1))
    dv = np.abs(np.diff(filt, axis=0))
    return float((dh.sum() + dv.sum()) / (dh.size + dv.size))


def cmd_inspect(args) -> int:
    network = model_io.load_model(args.model)
    convs = network.conv_layers()
    if not 0 <= args.layer < len(convs):
        print(f"error: layer index {args.layer} out of range; model has "
              f"{len(convs)} conv layers", file=sys.stderr)
        return EXIT_USAGE
    layer = convs[args.layer]
    filters = layer.materialize()
    os.makedirs(args.out_dir, exist_ok=True)
    sidecar = []
    for l in range(filters.shape[0]):
        for k in range(filters.shape[1]):
            filt = filters[l, k]
            name = f"filter_o{l:03d}_i{k:03d}.pgm"
            write_pgm(os.path.join(args.out_dir, name), scale_to_bytes(filt))
            sidecar.append({
                "file": name,
                "out_plane": l,
                "in_plane": k,
                "min": float(filt.min()),
                "max": float(filt.max()),
                "smoothness": smoothness_score(filt),
            })
    summary = {
        "layer": args.layer,
        "method": layer.method,
        "filters": sidecar,
        "mean_smoothness": float(
            np.mean([s["smoothness"] for s in sidecar])
        ),
    }
    with open(os.path.join(args.out_dir, "filters.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(json.dumps({
        "out_dir": args.out_dir,
        "count": len(sidecar),
        "mean_smoothness": summary["mean_smoothness"],
    }, sort_keys=True))
    return EXIT_OK


def _selftest_checks():
    from . import dct, hashing

    rng = np.random.default_rng(20240915)
    yield ("fnv-1a empty vector",
           hashing.hash64(b"") == 0xCBF29CE484222325)
    yield ("fnv-1a 'a' vector",
           hashing.hash64(b"a") == 0xAF63DC4C8601EC8C)
    for d in (3, 5, 11):
        plan = dct.get_plan(d)
        v = rng.normal(size=(d, d))
        ok = np.abs(dct.idct2(plan, dct.dct2(plan, v)) - v).max() < 1e-10
        yield (f"dct round-trip d={d}", ok)
    for d, m, n, k, a, b in ((3, 1, 1, 9, 1.0, 1.0), (5, 2, 3, 40, 0.25, 2.5),
                             (5, 1, 1, 12, 2.5, 0.25)):
        alloc = hashing.allocate_buckets(d, m, n, k, a, b)
        ok = (int(alloc.counts.sum()) == k
              and (alloc.counts >= 1).all()
              and (alloc.counts <= alloc.sizes).all())
        yield (f"allocation budget d={d} K={k} a={a} b={b}", ok)
    from .fresh_layer import FreshConv
    layer1 = FreshConv(2, 3, 3, 10, 0.5, 2.0, layer_seed=99)
    layer2 = FreshConv(2, 3, 3, 10, 0.5, 2.0, layer_seed=99)
    yield ("reconstruction determinism",
           np.array_equal(layer1.materialize(), layer2.materialize()))


def cmd_selftest(args) -> int:
    failures = 0
    for name, ok in _selftest_checks():
        print(f"{'ok  ' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1
    print(f"{failures} failures")
    return EXIT_OK if failures == 0 else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freshnets",
        description="Train and inspect hash-compressed convolutional networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--data-dir", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--log", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--deterministic", action="store_true")
    p_train.add_argument("--method", default=None)
    p_train.add_argument("--rate", type=float, default=None)
    p_train.add_argument("--alpha", type=float, default=None)
    p_train.add_argument("--beta", type=float, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="report test error of a saved model")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data-dir", required=True)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser(
        "inspect", help="export a conv layer's filters as PGM images"
    )
    p_inspect.add_argument("--model", required=True)
    p_inspect.add_argument("--layer", type=int, default=0)
    p_inspect.add_argument("--out-dir", required=True)
    p_inspect.set_defaults(func=cmd_inspect)

    p_self = sub.add_parser("selftest", help="run built-in sanity checks")
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FreshnetsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
