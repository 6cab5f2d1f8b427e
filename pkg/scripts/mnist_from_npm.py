"""Convert the digit JSON files of the npm ``mnist`` package into one gzipped IDX file.

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/mnist_from_npm.py package/src/digits data/mnist_10k.idx.gz

The package stores each image as 784 floats ``pixel / 255`` rounded to three
decimals; ``round(v * 255)`` recovers the original bytes. Images are shuffled
with a fixed seed so that any prefix mixes all ten digits.
"""
from __future__ import annotations

import argparse
import gzip
import json
from pathlib import Path

import numpy as np

from npkit.images import IdxImages, write_idx


def convert(digits_dir: Path, seed: int = 0) -> IdxImages:
    blocks = []
    for digit in range(10):
        flat = np.asarray(json.loads((digits_dir / f"{digit}.json").read_text())["data"])
        if flat.size % 784:
            raise ValueError(f"{digit}.json does not hold whole 28x28 images")
        blocks.append(np.rint(flat.reshape(-1, 28, 28) * 255).clip(0, 255).astype(np.uint8))
    pixels = np.concatenate(blocks)
    pixels = pixels[np.random.default_rng(seed).permutation(len(pixels))]
    return IdxImages(len(pixels), 28, 28, pixels)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("output", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    images = convert(args.digits_dir, args.seed)
    args.output.write_bytes(gzip.compress(write_idx(images), mtime=0))
    print(f"wrote {images.count} images to {args.output}")


if __name__ == "__main__":
    main()
