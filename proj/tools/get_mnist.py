#!/usr/bin/env python3
"""Materialize MNIST IDX files under data/mnist/.

Two sources, tried in order:
  1. Official IDX files already present in --source-dir (copied verbatim).
  2. The npm package `mnist`, which bundles ~10k real MNIST digits as JSON
     (1001+ samples per class, 28x28 grayscale in [0,1]). Those are split
     into balanced train/test IDX files with a fixed shuffle seed.

The subset path yields about 8.5k training and 1.5k test examples, which
matches the training harness's subsample mode; drop the four official
ubyte files into data/mnist/ (or point MODNET_MNIST_DIR at them) to run on
the full 60k/10k split instead.
"""

import argparse
import json
import pathlib
import random
import shutil
import struct
import subprocess
import sys
import tempfile

NAMES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def write_idx(images, labels, images_path, labels_path):
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def from_npm_package(out_dir, test_per_class, seed):
    with tempfile.TemporaryDirectory() as tmp:
        print("installing the npm 'mnist' package (bundles ~10k real MNIST samples)...")
        subprocess.run(
            ["npm", "install", "--prefix", tmp, "--no-audit", "--no-fund", "mnist"],
            check=True,
        )
        digits_dir = pathlib.Path(tmp) / "node_modules" / "mnist" / "src" / "digits"
        per_digit = {}
        for digit in range(10):
            flat = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
            n = len(flat) // 784
            imgs = [
                [min(255, max(0, round(v * 255))) for v in flat[i * 784 : (i + 1) * 784]]
                for i in range(n)
            ]
            per_digit[digit] = imgs
            print(f"  digit {digit}: {n} samples")

    rng = random.Random(seed)
    train, test = [], []
    for digit, imgs in per_digit.items():
        rng.shuffle(imgs)
        test.extend((img, digit) for img in imgs[:test_per_class])
        train.extend((img, digit) for img in imgs[test_per_class:])
    rng.shuffle(train)
    rng.shuffle(test)

    write_idx([i for i, _ in train], [l for _, l in train],
              out_dir / NAMES[0], out_dir / NAMES[1])
    write_idx([i for i, _ in test], [l for _, l in test],
              out_dir / NAMES[2], out_dir / NAMES[3])
    print(f"wrote {len(train)} train and {len(test)} test examples to {out_dir}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/mnist", help="output directory")
    parser.add_argument("--source-dir", default="", help="directory holding official ubyte files")
    parser.add_argument("--test-per-class", type=int, default=150)
    parser.add_argument("--seed", type=int, default=20240901)
    args = parser.parse_args()

    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.source_dir:
        src = pathlib.Path(args.source_dir)
        if all((src / n).exists() for n in NAMES):
            for n in NAMES:
                shutil.copyfile(src / n, out_dir / n)
            print(f"copied official IDX files from {src}")
            return 0
        print(f"{src} does not hold all four IDX files", file=sys.stderr)
        return 1

    from_npm_package(out_dir, args.test_per_class, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
