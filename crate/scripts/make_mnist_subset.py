"""Build a small MNIST subset in IDX format from the 5000-image sample bundled with mlxtend.

Usage: python3 scripts/make_mnist_subset.py <mlxtend wheel or mnist_5k.csv.gz> [out_dir]

The source rows are sorted by label (500 per class). Rows are interleaved
round-robin across classes so that any prefix is roughly class-balanced, then
the first 4000 become the train split and the remaining 1000 the test split.
"""
import gzip
import io
import os
import struct
import sys
import zipfile

import numpy as np


def load_rows(src):
    if src.endswith(".whl"):
        raw = zipfile.ZipFile(src).read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = open(src, "rb").read()
    return np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",").astype(np.uint8)


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload.tobytes())


def main():
    src = sys.argv[1]
    out = sys.argv[2] if len(sys.argv) > 2 else "data/mnist-subset"
    rows = load_rows(src)
    labels = rows[:, -1]
    by_class = [np.flatnonzero(labels == c) for c in range(10)]
    order = [idx[i] for i in range(500) for idx in by_class]
    rows = rows[order]
    images, labels = rows[:, :-1], rows[:, -1]
    os.makedirs(out, exist_ok=True)
    for name, sl in (("train", slice(0, 4000)), ("t10k", slice(4000, 5000))):
        img = images[sl]
        write_idx(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), 0x803, (len(img), 28, 28), img)
        write_idx(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), 0x801, (len(img),), labels[sl])


if __name__ == "__main__":
    main()
