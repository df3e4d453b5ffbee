"""Build the 4000/1000 MNIST subset from the digits bundled in the npm package
`mnist` 1.1.0 (src/digits/<d>.json, 28x28 floats in [0,1] rounded to 3 places).

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 convert_npm_mnist.py package/src/digits .
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, array, magic):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(array.astype(np.uint8).tobytes())


def main(src, out):
    images, labels = [], []
    for digit in range(10):
        raw = np.array(json.load(open(Path(src) / f"{digit}.json"))["data"], dtype=float)
        pixels = np.rint(raw * 255).reshape(-1, 28, 28)
        images.append(pixels)
        labels.append(np.full(len(pixels), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    train, test = order[:4000], order[4000:5000]
    out = Path(out)
    write_idx(out / "train-images-idx3-ubyte", images[train], 0x00000803)
    write_idx(out / "train-labels-idx1-ubyte", labels[train], 0x00000801)
    write_idx(out / "t10k-images-idx3-ubyte", images[test], 0x00000803)
    write_idx(out / "t10k-labels-idx1-ubyte", labels[test], 0x00000801)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
