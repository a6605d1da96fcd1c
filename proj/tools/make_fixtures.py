#!/usr/bin/env python3
"""Generate tiny golden binary fixtures for the loader tests.

Written independently of the C++ loaders: bytes are laid out straight from
the IDX / CIFAR-10 binary format descriptions so the tests exercise the
loaders against a second implementation of the formats.
"""
import struct
import sys
from pathlib import Path


def write_idx(outdir: Path) -> None:
    # 3 images of 2 rows x 3 cols with distinct, easily-checked bytes.
    images = [
        [0, 51, 102, 153, 204, 255],
        [255, 204, 153, 102, 51, 0],
        [10, 20, 30, 40, 50, 60],
    ]
    labels = [1, 0, 7]
    img = struct.pack(">IIII", 0x00000803, len(images), 2, 3)
    for im in images:
        img += bytes(im)
    (outdir / "golden-images-idx3-ubyte").write_bytes(img)

    lab = struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)
    (outdir / "golden-labels-idx1-ubyte").write_bytes(lab)


def write_cifar(outdir: Path) -> None:
    # 2 records: 1 label byte + 32*32*3 channel-major pixels each.
    rec = b""
    for label, base in ((3, 0), (8, 100)):
        pixels = bytes((base + i) % 256 for i in range(3 * 32 * 32))
        rec += bytes([label]) + pixels
    (outdir / "golden_cifar.bin").write_bytes(rec)


def main() -> None:
    outdir = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
    outdir.mkdir(parents=True, exist_ok=True)
    write_idx(outdir)
    write_cifar(outdir)
    print(f"fixtures written to {outdir}")


if __name__ == "__main__":
    main()
