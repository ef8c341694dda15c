"""Write the 5000-image MNIST sample bundled with mlxtend as IDX files.

The sample holds 500 training-set images per class.  After a fixed shuffle
the first 4000 become ``train-*`` files and the last 1000 ``t10k-*`` files, so
the layout matches a real MNIST directory and ``capsroute`` can read it with
``--data-dir``.

    python scripts/export_desk_mnist.py data/mnist-desk
"""

import argparse
import gzip
import importlib.resources
import sys
from pathlib import Path

import numpy as np

from capsroute.data import write_idx

TRAIN_COUNT = 4000


def export(out_dir, seed=0):
    src = importlib.resources.files("mlxtend") / "data" / "data" / "mnist_5k.csv.gz"
    with gzip.open(src) as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(table))
    pixels = table[order, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[order, -1].astype(np.uint8)
    out = Path(out_dir)
    write_idx(out / "train-images-idx3-ubyte", pixels[:TRAIN_COUNT])
    write_idx(out / "train-labels-idx1-ubyte", labels[:TRAIN_COUNT])
    write_idx(out / "t10k-images-idx3-ubyte", pixels[TRAIN_COUNT:])
    write_idx(out / "t10k-labels-idx1-ubyte", labels[TRAIN_COUNT:])
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(export(args.out_dir, args.seed))


if __name__ == "__main__":
    sys.exit(main())
