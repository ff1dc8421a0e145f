#!/usr/bin/env python3
"""Regenerate data/mnist10k from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist) bundles 10,000 MNIST
digits as JSON, with pixel values stored as x/255 rounded to three decimals.
This script recovers the original 8-bit pixels and writes a single IDX pair
(big-endian headers, unsigned-byte payload), shuffled with a fixed seed so
classes are interleaved.

Usage:
    npm install mnist
    python3 scripts/make_mnist_subset.py node_modules/mnist/src/digits data/mnist10k
"""

import json
import pathlib
import random
import struct
import sys


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src = pathlib.Path(sys.argv[1])
    out = pathlib.Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = bytes(round(v * 255) for v in flat[i : i + 784])
            samples.append((digit, pixels))

    rng = random.Random(11)
    rng.shuffle(samples)
    n = len(samples)

    with open(out / "mnist10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for _, pixels in samples:
            f.write(pixels)
    with open(out / "mnist10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for label, _ in samples))

    print(f"wrote {n} samples to {out}")


if __name__ == "__main__":
    main()
