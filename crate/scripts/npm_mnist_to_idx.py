#!/usr/bin/env python3
"""Convert the digit JSON files of the npm `mnist` package to IDX files.

The package ships about 1000 images per digit as `src/digits/<d>.json`,
each `{"data": [784 floats in 0..1 per image, ...]}`. The images are
shuffled with a fixed seed; the first 8000 become the training set and the
rest the test set.

usage: npm_mnist_to_idx.py <package dir> <output dir>
"""

import json
import random
import struct
import sys
from pathlib import Path


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src = Path(sys.argv[1]) / "src" / "digits"
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(0, len(data), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in data[i : i + 784])
            samples.append((pixels, digit))
    random.Random(0).shuffle(samples)

    def write(prefix: str, items) -> None:
        with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
            f.write(struct.pack(">IIII", 2051, len(items), 28, 28))
            for pixels, _ in items:
                f.write(pixels)
        with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
            f.write(struct.pack(">II", 2049, len(items)))
            f.write(bytes(label for _, label in items))

    write("train", samples[:8000])
    write("t10k", samples[8000:])
    print(f"wrote {len(samples[:8000])} train and {len(samples[8000:])} test images to {out}")


if __name__ == "__main__":
    main()
