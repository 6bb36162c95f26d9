"""Convert the digits bundled with the npm ``mnist`` package into IDX files.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships 10,000
MNIST digits as JSON arrays of pixel/255 values rounded to three decimals.
Three decimals are finer than the 1/255 grid, so ``round(v * 255)``
recovers the original bytes.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/make_mnist_idx.py package/src/digits data/mnist
"""

import json
import sys
from pathlib import Path

import numpy as np

from spat.data import write_idx


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    images, labels = [], []
    for digit in range(10):
        flat = np.array(json.loads((src / f"{digit}.json").read_text())["data"])
        pix = np.rint(flat * 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(pix)
        labels.append(np.full(pix.shape[0], digit, dtype=np.uint8))
        print(f"digit {digit}: {pix.shape[0]} images")
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    # interleave classes so prefixes of the file are balanced
    order = np.random.default_rng(0).permutation(labels.size)
    write_idx(images[order], labels[order], dst / "images-idx3-ubyte.gz", dst / "labels-idx1-ubyte.gz",
              compress=True)


if __name__ == "__main__":
    main(*sys.argv[1:3])
