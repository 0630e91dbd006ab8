#!/usr/bin/env python3
"""Convert the 5000-image MNIST sample shipped in the mlxtend wheel to IDX files.

Usage:
    pip download --no-deps mlxtend
    python3 tools/make_mnist_subset.py mlxtend-*.whl data/mnist-5k

Writes train-{images-idx3,labels-idx1}-ubyte (400 per digit) and
t10k-{images-idx3,labels-idx1}-ubyte (100 per digit). The split and the
ordering are fixed, so the output is byte-identical across runs.
"""

import gzip
import random
import struct
import sys
import zipfile
from pathlib import Path

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_PER_CLASS = 400


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    with zipfile.ZipFile(wheel) as z:
        rows = gzip.decompress(z.read(CSV_MEMBER)).decode().splitlines()

    by_class = {}
    for row in rows:
        values = [int(float(v)) for v in row.split(",")]
        by_class.setdefault(values[-1], []).append(values[:-1])

    train, test = [], []
    for label in sorted(by_class):
        samples = by_class[label]
        train += [(img, label) for img in samples[:TRAIN_PER_CLASS]]
        test += [(img, label) for img in samples[TRAIN_PER_CLASS:]]

    rng = random.Random(0)
    rng.shuffle(train)
    rng.shuffle(test)

    out.mkdir(parents=True, exist_ok=True)
    for prefix, split in (("train", train), ("t10k", test)):
        write_images(out / f"{prefix}-images-idx3-ubyte", [img for img, _ in split])
        write_labels(out / f"{prefix}-labels-idx1-ubyte", [lab for _, lab in split])
        print(f"{prefix}: {len(split)} images")


if __name__ == "__main__":
    main()
