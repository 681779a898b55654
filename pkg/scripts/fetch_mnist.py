#!/usr/bin/env python3
"""Download the MNIST IDX files into a data directory.

Usage: python scripts/fetch_mnist.py [DEST_DIR]

Default destination is ./data/mnist. The acceptance tests look there (or
at $SUPPORTNET_MNIST_DIR) for the four uncompressed IDX files.
"""

import gzip
import os
import sys
import urllib.request

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]


def fetch(dest_dir: str) -> int:
    os.makedirs(dest_dir, exist_ok=True)
    for name in FILES:
        target = os.path.join(dest_dir, name)
        if os.path.exists(target):
            print(f"{target} already present")
            continue
        last_error = None
        for mirror in MIRRORS:
            url = mirror + name + ".gz"
            try:
                print(f"fetching {url}")
                with urllib.request.urlopen(url, timeout=60) as response:
                    blob = gzip.decompress(response.read())
                with open(target, "wb") as f:
                    f.write(blob)
                break
            except Exception as exc:  # try the next mirror
                last_error = exc
        else:
            print(f"failed to fetch {name}: {last_error}", file=sys.stderr)
            return 1
    print(f"MNIST ready in {dest_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(fetch(sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist")))
