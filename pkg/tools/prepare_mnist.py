#!/usr/bin/env python3
"""Write MNIST as gzipped IDX files from the copy bundled in the ``mnist-hub`` wheel.

The wheel ships the classic ``mnist.pkl.gz`` (train 50000 / valid 10000 /
test 10000, pixels stored as byte/256). Train and valid are concatenated back
into the 60000-image training file; pixel bytes are recovered exactly.

    python tools/prepare_mnist.py --out data/mnist
    python tools/prepare_mnist.py --wheel path/to/mnist_hub-0.1.4-py3-none-any.whl
"""

import argparse
import glob
import gzip
import io
import os
import pickle
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from tradeoff_lab.data import MNIST_FILES, write_idx_images, write_idx_labels  # noqa: E402

PICKLE_MEMBER = "mnist/data/mnist.pkl.gz"


def fetch_wheel(dest):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "mnist-hub==0.1.4", "-d", dest, "-q"],
        check=True,
    )
    return glob.glob(os.path.join(dest, "mnist_hub-*.whl"))[0]


def to_bytes(x):
    b = np.asarray(x, dtype=np.float64) * 256.0
    out = np.rint(b)
    if np.abs(out - b).max() != 0 or out.max() > 255:
        raise ValueError("pixel values are not exact multiples of 1/256")
    return out.astype(np.uint8).reshape(-1, 28, 28)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    ap.add_argument("--wheel", help="local mnist-hub wheel; downloaded with pip when omitted")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        with zipfile.ZipFile(wheel) as z:
            blob = z.read(PICKLE_MEMBER)
    with gzip.open(io.BytesIO(blob)) as f:
        (xtr, ytr), (xva, yva), (xte, yte) = pickle.load(f, encoding="latin1")

    os.makedirs(args.out, exist_ok=True)
    train_x = to_bytes(np.concatenate([xtr, xva]))
    train_y = np.concatenate([ytr, yva])
    for split, x, y in (("train", train_x, train_y), ("test", to_bytes(xte), yte)):
        img_name, lbl_name = MNIST_FILES[split]
        write_idx_images(os.path.join(args.out, img_name), x)
        write_idx_labels(os.path.join(args.out, lbl_name), y)
        print(f"{split}: {len(y)} images -> {args.out}")


if __name__ == "__main__":
    main()
