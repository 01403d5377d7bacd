"""Build the bundled MNIST subset under data/mnist/ as gzipped IDX files.

Source: the `mnist` npm package (v1.1.0, MIT license, github.com/cazala/mnist),
which ships 10,000 genuine MNIST digits as JSON, one file per class, pixels
quantized as round(v/255, 3). This script recovers the original uint8
pixels exactly (round(v*255)), interleaves the classes, shuffles the pool
with a fixed seed, and writes:

    train-images-idx3-ubyte.gz / train-labels-idx1-ubyte.gz   8000 digits
    t10k-images-idx3-ubyte.gz  / t10k-labels-idx1-ubyte.gz    2000 digits

in the standard big-endian IDX layout. Run from the repo root with the
extracted npm package as argument:

    npm pack mnist && tar xzf mnist-*.tgz
    python tools/make_mnist_idx.py package/src/digits data/mnist
"""

import gzip
import json
import os
import struct
import sys

import numpy as np

POOL_SEED = 20240901
TEST_COUNT = 2000


def load_pool(digits_dir):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(digits_dir, f"{digit}.json")) as f:
            flat = np.asarray(json.load(f)["data"], dtype=np.float64)
        imgs = np.round(flat * 255.0).astype(np.uint8).reshape(-1, 28, 28)
        images.append(imgs)
        labels.append(np.full(imgs.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    perm = np.random.default_rng(POOL_SEED).permutation(images.shape[0])
    return images[perm], labels[perm]


def write_idx_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.tobytes())


def main():
    digits_dir, out_dir = sys.argv[1], sys.argv[2]
    os.makedirs(out_dir, exist_ok=True)
    images, labels = load_pool(digits_dir)
    split = images.shape[0] - TEST_COUNT
    write_idx_images(os.path.join(out_dir, "train-images-idx3-ubyte.gz"),
                     images[:split])
    write_idx_labels(os.path.join(out_dir, "train-labels-idx1-ubyte.gz"),
                     labels[:split])
    write_idx_images(os.path.join(out_dir, "t10k-images-idx3-ubyte.gz"),
                     images[split:])
    write_idx_labels(os.path.join(out_dir, "t10k-labels-idx1-ubyte.gz"),
                     labels[split:])
    print(f"wrote {split} train + {TEST_COUNT} test digits to {out_dir}")


if __name__ == "__main__":
    main()
