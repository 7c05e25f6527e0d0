"""Write a small MNIST subset as gzipped IDX files (4000 train / 1000 test).

The 5000-example CSV shipped inside the mlxtend wheel is used because it is
reachable through a plain package mirror.  Pass --csv to use a local copy, or
point CERTLAB_DATA at a directory that already holds the full MNIST IDX files
instead of running this script.
"""
import argparse
import gzip
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from certlab.data import MNIST_FILES, save_idx


def read_csv_gz(raw: bytes):
    a = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    return a[:, :-1].astype(np.uint8), a[:, -1].astype(np.uint8)


def from_wheel() -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp,
                        "mlxtend==0.24.0"], check=True)
        wheel = next(Path(tmp).glob("mlxtend-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            return z.read("mlxtend/data/data/mnist_5k.csv.gz")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data")
    ap.add_argument("--csv", help="local mnist_5k.csv.gz (or an mlxtend wheel)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=4000)
    args = ap.parse_args(argv)

    if args.csv and args.csv.endswith(".whl"):
        with zipfile.ZipFile(args.csv) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    elif args.csv:
        raw = Path(args.csv).read_bytes()
    else:
        raw = from_wheel()
    X, y = read_csv_gz(raw)
    # the CSV is sorted by class
    perm = np.random.default_rng(args.seed).permutation(len(y))
    X, y = X[perm].reshape(-1, 28, 28), y[perm]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = args.n_train
    for split, sl in (("train", slice(0, k)), ("test", slice(k, None))):
        img, lab = MNIST_FILES[split]
        save_idx(X[sl], out / img)
        save_idx(y[sl], out / lab)
        print(f"{split}: {len(y[sl])} examples -> {out / img}")


if __name__ == "__main__":
    main()
