#!/usr/bin/env python3
"""Build the MNIST subset used by the desk-scale experiment.

Input is the per-digit JSON layout of the npm `mnist` package
(package/src/digits/{0..9}.json, each {"data": [...]} holding 784 floats in
[0, 1] per image). Output is a standard IDX image/label pair.
"""

import argparse
import json
import pathlib
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--per-class", type=int, default=600)
    args = ap.parse_args()

    images = []
    labels = []
    per_digit = []
    for d in range(10):
        flat = json.loads((args.digits_dir / f"{d}.json").read_text())["data"]
        count = len(flat) // 784
        if count < args.per_class:
            raise SystemExit(f"digit {d}: only {count} images")
        per_digit.append(flat)
    # Interleave classes so any prefix is roughly balanced.
    for k in range(args.per_class):
        for d in range(10):
            px = per_digit[d][k * 784:(k + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
            labels.append(d)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(args.out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
