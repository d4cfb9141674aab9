"""Convert the 5000-sample MNIST subset bundled with mlxtend into IDX files.

Usage: pip download --no-deps mlxtend -d /tmp/mlx
       python3 scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-*.whl data/mnist-5k

Writes a 4000/1000 train/test split (seeded permutation, stratification not enforced).
"""
import gzip
import struct
import sys
import zipfile

import numpy as np


def write_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(wheel, out_dir):
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = gzip.decompress(raw).decode().strip().split("\n")
    table = np.array([[float(v) for v in r.split(",")] for r in rows])
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1].astype(int)
    perm = np.random.RandomState(0).permutation(len(labels))
    images, labels = images[perm], labels[perm]
    write_images(f"{out_dir}/train-images-idx3-ubyte", images[:4000])
    write_labels(f"{out_dir}/train-labels-idx1-ubyte", labels[:4000])
    write_images(f"{out_dir}/t10k-images-idx3-ubyte", images[4000:])
    write_labels(f"{out_dir}/t10k-labels-idx1-ubyte", labels[4000:])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
