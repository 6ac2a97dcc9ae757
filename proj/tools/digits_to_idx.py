#!/usr/bin/env python3
"""Convert a CSV of 28x28 digit images (784 pixel columns then a label column)
into an IDX image file and an IDX label file.

Example:
    tools/digits_to_idx.py mnist_5k.csv.gz tests/data/digits --classes 0 1 2 --per-class 300
"""

import argparse
import csv
import gzip
import struct
import zipfile
from pathlib import Path


def read_rows(path):
    path = Path(path)
    if path.suffix == ".whl":
        with zipfile.ZipFile(path) as z:
            name = next(n for n in z.namelist() if n.endswith("mnist_5k.csv.gz"))
            text = gzip.decompress(z.read(name)).decode()
    elif path.suffix == ".gz":
        text = gzip.decompress(path.read_bytes()).decode()
    else:
        text = path.read_text()
    return list(csv.reader(text.splitlines()))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("source", help="CSV, .csv.gz, or an mlxtend wheel containing mnist_5k.csv.gz")
    ap.add_argument("prefix", help="output prefix; writes <prefix>-images.idx3 and <prefix>-labels.idx1")
    ap.add_argument("--classes", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--per-class", type=int, default=300)
    args = ap.parse_args()

    kept = {c: [] for c in args.classes}
    for row in read_rows(args.source):
        label = int(float(row[-1]))
        if label in kept and len(kept[label]) < args.per_class:
            kept[label].append(bytes(int(float(v)) for v in row[:-1]))
    short = [c for c, imgs in kept.items() if len(imgs) < args.per_class]
    if short:
        raise SystemExit(f"not enough images for classes {short}")

    # Interleave classes so any prefix of the file stays balanced.
    images, labels = [], []
    for i in range(args.per_class):
        for c in args.classes:
            images.append(kept[c][i])
            labels.append(c)

    prefix = Path(args.prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}-images.idx3", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(f"{prefix}-labels.idx1", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {prefix}-images.idx3")


if __name__ == "__main__":
    main()
