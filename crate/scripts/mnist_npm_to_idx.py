"""Build the 10k-digit MNIST subset in IDX format from the `mnist` npm package.

The package ships 10,000 MNIST digits as JSON, one file per class, with
pixels stored as intensity/255 rounded to three decimals. Multiplying by 255
and rounding recovers the original bytes exactly (the rounding error is below
0.5/255). Samples are interleaved with a fixed shuffle so that any prefix has
roughly balanced classes.

usage: python3 scripts/mnist_npm_to_idx.py mnist-1.1.0.tgz data/mnist-10k
"""

import json
import random
import struct
import sys
import tarfile
from pathlib import Path

ROWS = COLS = 28


def main(tarball: str, out_dir: str) -> None:
    samples = []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = json.load(member)["data"]
            size = ROWS * COLS
            for start in range(0, len(flat), size):
                pixels = bytes(round(v * 255) for v in flat[start : start + size])
                samples.append((pixels, digit))
    random.Random(0).shuffle(samples)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(samples), ROWS, COLS))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
