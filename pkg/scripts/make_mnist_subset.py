"""Build the bundled 5,000-image MNIST subset as gzip'd IDX files.

The source is the ``mnist_5k.csv.gz`` table shipped inside the mlxtend
wheel (784 pixel columns then the label, 500 images per digit):

    pip download --no-deps -d /tmp/wheels mlxtend
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from sncl.datasets import BUNDLED_DIR, BUNDLED_IMAGES, BUNDLED_LABELS, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_table(source):
    source = Path(source)
    if source.suffix == ".whl":
        raw = zipfile.ZipFile(source).read(MEMBER)
    else:
        raw = source.read_bytes()
    return np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("--out", default=str(BUNDLED_DIR))
    args = ap.parse_args()

    table = read_table(args.source)
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / BUNDLED_IMAGES, images)
    write_idx(out / BUNDLED_LABELS, labels)
    print(f"wrote {len(labels)} images to {out}")


if __name__ == "__main__":
    main()
