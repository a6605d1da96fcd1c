#!/usr/bin/env python3
"""Convert the bundled MNIST digit JSONs (npm `mnist` package layout) into
IDX image/label files.

Usage: make_mnist_idx.py <digits_dir> <out_dir> [train_per_class] [test_per_class]

Writes train-images-idx3-ubyte / train-labels-idx1-ubyte and the test
equivalents under <out_dir>. Pixels in the JSONs are b/255 rounded to three
decimals; round(v*255) recovers the original byte exactly.
"""
import json
import struct
import sys
from pathlib import Path


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    digits_dir = Path(sys.argv[1])
    out_dir = Path(sys.argv[2])
    train_pc = int(sys.argv[3]) if len(sys.argv) > 3 else 800
    test_pc = int(sys.argv[4]) if len(sys.argv) > 4 else 200

    out_dir.mkdir(parents=True, exist_ok=True)
    train_imgs, train_labels, test_imgs, test_labels = [], [], [], []
    for digit in range(10):
        flat = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        n = len(flat) // 784
        imgs = [
            [round(v * 255) for v in flat[i * 784 : (i + 1) * 784]]
            for i in range(n)
        ]
        if train_pc + test_pc > n:
            raise SystemExit(f"digit {digit}: only {n} samples available")
        train_imgs += imgs[:train_pc]
        train_labels += [digit] * train_pc
        test_imgs += imgs[train_pc : train_pc + test_pc]
        test_labels += [digit] * test_pc

    # interleave classes so any prefix subset is roughly balanced
    def interleave(imgs, labels, per_class):
        order = []
        for i in range(per_class):
            for c in range(10):
                order.append(c * per_class + i)
        return [imgs[i] for i in order], [labels[i] for i in order]

    train_imgs, train_labels = interleave(train_imgs, train_labels, train_pc)
    test_imgs, test_labels = interleave(test_imgs, test_labels, test_pc)

    write_idx_images(out_dir / "train-images-idx3-ubyte", train_imgs)
    write_idx_labels(out_dir / "train-labels-idx1-ubyte", train_labels)
    write_idx_images(out_dir / "t10k-images-idx3-ubyte", test_imgs)
    write_idx_labels(out_dir / "t10k-labels-idx1-ubyte", test_labels)
    print(f"wrote {len(train_imgs)} train / {len(test_imgs)} test images")


if __name__ == "__main__":
    main()
