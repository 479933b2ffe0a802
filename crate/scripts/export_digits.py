"""Write the scikit-learn 8x8 digits (1797 images) as an IDX image/label pair.

Pixel values 0..16 are rescaled to 0..255 and rounded.
"""

import struct
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def main(out: Path) -> None:
    d = load_digits()
    images = np.rint(d.images * 255.0 / 16.0).astype(np.uint8)
    labels = d.target.astype(np.uint8)
    n, rows, cols = images.shape
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, rows, cols))
        f.write(images.tobytes())
    with open(out / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.tobytes())


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/digits"))
