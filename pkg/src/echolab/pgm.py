"""Plain (P2) PGM writer and reader; bit-exact, no imaging dependency."""

from __future__ import annotations

import numpy as np


def format_pgm(pixels, maxval: int | None = None) -> str:
    img = np.asarray(pixels, dtype=np.int64)
    if img.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    if img.size and img.min() < 0:
        raise ValueError("gray levels must be non-negative")
    if maxval is None:
        maxval = max(1, int(img.max()) if img.size else 1)
    lines = ["P2", f"{img.shape[1]} {img.shape[0]}", str(maxval)]
    lines += [" ".join(str(int(v)) for v in row) for row in img]
    return "\n".join(lines) + "\n"


def write_pgm(path, pixels, maxval: int | None = None) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_pgm(pixels, maxval))


def read_pgm(path):
    """Return (pixels, maxval) from a plain PGM file."""
    with open(path) as fh:
        tokens = [t for line in fh for t in line.split("#")[0].split()]
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    return data.reshape(height, width), maxval
