"""Cut the first N records out of the MNIST IDX files and write gzipped copies.

Usage:
    python scripts/make_mnist_subset.py SRC_DIR DST_DIR [--train 5000] [--test 1000]

SRC_DIR must hold the four uncompressed files distributed with MNIST
(train-images-idx3-ubyte, ...). One way to get them without a browser is
`npm pack mnist-data` and extracting package/data/.
"""
import argparse
import gzip
import struct
from pathlib import Path


def cut(src, dst, count):
    raw = Path(src).read_bytes()
    magic, total = struct.unpack(">ii", raw[:8])
    if magic == 2051:
        rows, cols = struct.unpack(">ii", raw[8:16])
        header = struct.pack(">iiii", magic, count, rows, cols)
        body = raw[16:16 + count * rows * cols]
    elif magic == 2049:
        header = struct.pack(">ii", magic, count)
        body = raw[8:8 + count]
    else:
        raise SystemExit(f"{src}: unexpected magic {magic}")
    if count > total:
        raise SystemExit(f"{src}: only {total} records")
    with gzip.GzipFile(dst, "wb", mtime=0) as f:
        f.write(header + body)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=1000)
    args = ap.parse_args()
    src, dst = Path(args.src), Path(args.dst)
    dst.mkdir(parents=True, exist_ok=True)
    for prefix, n in (("train", args.train), ("t10k", args.test)):
        for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
            cut(src / f"{prefix}-{kind}", dst / f"{prefix}-{kind}.gz", n)


if __name__ == "__main__":
    main()
