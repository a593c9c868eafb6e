"""Build the vendored 10k MNIST sample under data/mnist10k/.

Source: the `mnist` npm package (MIT licensed), which ships 10,000
genuine MNIST digits as JSON pixel arrays (floats in [0,1], 784 per
image, ~1000 per class). Pixels are re-quantized to uint8 and written as
gzipped IDX files with a seed-0 deterministic 8000/2000 train/test split.

Usage:
    npm pack mnist && tar xf mnist-*.tgz -C /tmp   # -> /tmp/package
    python3 scripts/prepare_mnist.py [--source /tmp/package/src/digits] [--out data/mnist10k]

Regenerating produces byte-identical files (gzip streams are written
with a fixed zero mtime).
"""

import argparse
import json
from pathlib import Path

import numpy as np

from parsevalnet.data import MNIST_FILES, write_idx_images, write_idx_labels
from parsevalnet.rng import make_rng

SPLIT_SEED = 0
N_TEST = 2000


def load_digits(source: Path) -> tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for digit in range(10):
        flat = json.loads((source / f"{digit}.json").read_text())["data"]
        px = np.asarray(flat, dtype=np.float64)
        if px.size % 784 != 0:
            raise ValueError(f"digit {digit}: pixel count {px.size} not a multiple of 784")
        imgs = np.round(px.reshape(-1, 28, 28) * 255.0).astype(np.uint8)
        images.append(imgs)
        labels.append(np.full(imgs.shape[0], digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--source", default="/tmp/package/src/digits", type=Path)
    ap.add_argument("--out", default=Path(__file__).resolve().parent.parent / "data" / "mnist10k",
                    type=Path)
    args = ap.parse_args()

    images, labels = load_digits(args.source)
    print(f"loaded {len(labels)} digits, per-class counts: {np.bincount(labels).tolist()}")
    perm = make_rng(SPLIT_SEED).permutation(len(labels))
    test_idx, train_idx = perm[:N_TEST], perm[N_TEST:]

    args.out.mkdir(parents=True, exist_ok=True)
    for split, idx in (("train", train_idx), ("test", test_idx)):
        img_name, lab_name = MNIST_FILES[split]
        write_idx_images(args.out / (img_name + ".gz"), images[idx])
        write_idx_labels(args.out / (lab_name + ".gz"), labels[idx])
        print(f"{split}: {len(idx)} examples, class counts {np.bincount(labels[idx]).tolist()}")


if __name__ == "__main__":
    main()
