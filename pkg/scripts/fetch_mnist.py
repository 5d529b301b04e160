"""Build gzipped MNIST IDX files from the 10,000 digits bundled in the npm ``mnist`` package.

The package stores each digit class as a flat JSON array of pixel
intensities already divided by 255 (three decimals); they are rounded back
to bytes here. Requires ``npm`` on PATH, or pass ``--tarball`` to an
already-downloaded ``mnist-1.1.0.tgz``.

    python scripts/fetch_mnist.py [--out data/mnist] [--tarball mnist-1.1.0.tgz]
"""

import argparse
import gzip
import json
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dirvae.data import MNIST_FILES, serialize_idx_images, serialize_idx_labels  # noqa: E402

PACKAGE = "mnist@1.1.0"


def npm_pack(workdir):
    subprocess.run(["npm", "pack", PACKAGE, "--silent"], cwd=workdir, check=True, capture_output=True)
    return next(Path(workdir).glob("mnist-*.tgz"))


def read_digits(tarball):
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = np.asarray(json.load(member)["data"], dtype=np.float64)
            block = flat.reshape(-1, 784)
            images.append(block)
            labels.append(np.full(block.shape[0], digit))
    return np.concatenate(images), np.concatenate(labels)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "mnist"))
    ap.add_argument("--tarball", default=None)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tarball = Path(args.tarball) if args.tarball else npm_pack(tmp)
        pixels, labels = read_digits(tarball)
    pixels = np.rint(pixels * 255.0) / 255.0
    # gzip mtime=0 keeps the files byte-reproducible
    for key, payload in (
        ("train_images", serialize_idx_images(pixels, 28, 28)),
        ("train_labels", serialize_idx_labels(labels)),
    ):
        with open(out / (MNIST_FILES[key] + ".gz"), "wb") as fh:
            fh.write(gzip.compress(payload, mtime=0))
    print(f"wrote {pixels.shape[0]} images to {out}")


if __name__ == "__main__":
    main()
