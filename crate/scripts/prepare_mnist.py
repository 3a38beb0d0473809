#!/usr/bin/env python3
"""Write an MNIST subset as gzipped IDX files (the canonical MNIST layout).

Full MNIST can be dropped into the data directory instead; the loader reads
`train-images-idx3-ubyte[.gz]` and `train-labels-idx1-ubyte[.gz]`.

Without network access to the canonical mirrors, this script uses the
5,000-image MNIST training subset (500 per digit) shipped inside the
`mlxtend` wheel, fetched with `pip download`.
"""
import argparse
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np


def fetch_subset(workdir):
    subprocess.check_call(
        [sys.executable, "-m", "pip", "download", "--no-deps", "mlxtend", "-d", workdir],
        stdout=subprocess.DEVNULL,
    )
    wheel = glob.glob(os.path.join(workdir, "mlxtend-*.whl"))[0]
    with zipfile.ZipFile(wheel) as z:
        raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(gzip.decompress(raw).decode().splitlines(), delimiter=",")
    return table[:, :-1].astype(np.uint8), table[:, -1].astype(np.uint8)


def write_idx(out_dir, images, labels):
    n = images.shape[0]
    with gzip.GzipFile(os.path.join(out_dir, "train-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(os.path.join(out_dir, "train-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/mnist")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        images, labels = fetch_subset(tmp)
    write_idx(args.out, images, labels)
    print(f"wrote {images.shape[0]} images to {args.out}")


if __name__ == "__main__":
    main()
