#!/usr/bin/env python3
"""Convert the digit samples bundled with the `mnist` npm package (v1.1.0,
MIT, https://github.com/cazala/mnist) into gzipped IDX files.

The package stores each digit class as a JSON array of 784-float images in
[0, 1] (bytes / 255 rounded to three decimals). Rounding back to the nearest
byte recovers the original pixel values.

Usage: npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
       python3 tools/mnist_subset_from_npm.py package/src/digits data/mnist-subset
"""
import gzip
import json
import os
import random
import struct
import sys


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for k in range(len(flat) // 784):
            px = flat[k * 784:(k + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
            labels.append(digit)
    order = list(range(len(labels)))
    random.Random(20230911).shuffle(order)
    os.makedirs(dst, exist_ok=True)
    with gzip.GzipFile(os.path.join(dst, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(order), 28, 28))
        for i in order:
            f.write(images[i])
    with gzip.GzipFile(os.path.join(dst, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(order)))
        f.write(bytes(labels[i] for i in order))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
