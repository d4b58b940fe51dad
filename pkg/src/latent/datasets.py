"""Toy image sets and on-disk formats for images and feature tables.

Image CSV: header ``label,p0,p1,...``; one image per row, pixels flattened
row-major (height, width, channels).  The label column name is
configurable when reading.

Tensor file: ``b"LTTN"``, uint32 ndim, ndim x uint32 dims, then float32
values, all little-endian.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Tuple

import numpy as np

__all__ = [
    "make_bars",
    "make_digits",
    "write_image_csv",
    "read_image_csv",
    "read_table_csv",
    "write_tensor",
    "read_tensor",
    "write_toy_datasets",
    "TOY_SETS",
]

TENSOR_MAGIC = b"LTTN"

# 3x5 glyphs, one string per row
_GLYPHS = {
    0: ("111", "101", "101", "101", "111"),
    1: ("010", "110", "010", "010", "111"),
    2: ("111", "001", "111", "100", "111"),
    3: ("111", "001", "011", "001", "111"),
    4: ("101", "101", "111", "001", "001"),
    5: ("111", "100", "111", "001", "111"),
    6: ("111", "100", "111", "101", "111"),
    7: ("111", "001", "010", "010", "010"),
    8: ("111", "101", "111", "101", "111"),
    9: ("111", "101", "111", "001", "111"),
}


def make_bars(n: int, seed: int, size: int = 8, noise: float = 0.25) -> Tuple[np.ndarray, np.ndarray]:
    """Two classes of noisy ``size x size`` images.

    Label 0 carries a horizontal bar, label 1 a vertical bar; bar position,
    length and brightness vary per image.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    images = rng.normal(0.0, noise, size=(n, size, size))
    for img, label in zip(images, labels):
        pos = rng.integers(1, size - 1)
        length = rng.integers(size // 2, size + 1)
        start = rng.integers(0, size - length + 1)
        level = rng.uniform(0.6, 1.0)
        if label == 0:
            img[pos, start : start + length] += level
        else:
            img[start : start + length, pos] += level
    return np.clip(images, 0.0, 1.0), labels


def make_digits(n: int, seed: int, size: int = 8, noise: float = 0.2) -> Tuple[np.ndarray, np.ndarray]:
    """Ten classes of jittered 3x5 digit glyphs drawn at double width."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    images = rng.normal(0.0, noise, size=(n, size, size))
    for img, label in zip(images, labels):
        glyph = np.array([[c == "1" for c in row] for row in _GLYPHS[int(label)]], dtype=np.float64)
        glyph = np.kron(glyph, np.ones((1, 2)))
        gh, gw = glyph.shape
        top = rng.integers(0, size - gh + 1)
        left = rng.integers(0, size - gw + 1)
        img[top : top + gh, left : left + gw] += glyph * rng.uniform(0.7, 1.0)
    return np.clip(images, 0.0, 1.0), labels


TOY_SETS = {
    # name: (generator, n_train, n_test, seed)
    "bars": (make_bars, 2000, 500, 11),
    "digits": (make_digits, 1500, 500, 23),
}


def write_image_csv(path, images, labels) -> None:
    images = np.asarray(images, dtype=np.float64)
    flat = images.reshape(images.shape[0], -1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"p{i}" for i in range(flat.shape[1])])
        for label, row in zip(labels, flat):
            writer.writerow([int(label)] + [f"{v:.6f}" for v in row])


def read_table_csv(path, label_column="label") -> Tuple[np.ndarray, np.ndarray]:
    """Numeric CSV with a header row -> ``(values, labels)``.

    ``label_column`` is a header name or a 0-based column index.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if isinstance(label_column, int) or str(label_column).isdigit():
        idx = int(label_column)
    else:
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in {path}")
        idx = header.index(label_column)
    if not rows:
        return np.zeros((0, len(header) - 1)), np.zeros(0, dtype=np.int64)
    table = np.array(rows, dtype=np.float64)
    labels = table[:, idx].astype(np.int64)
    values = np.delete(table, idx, axis=1)
    return values, labels


def read_image_csv(path, shape, label_column="label") -> Tuple[np.ndarray, np.ndarray]:
    values, labels = read_table_csv(path, label_column)
    shape = tuple(shape)
    if values.shape[1] != int(np.prod(shape)):
        raise ValueError(f"{path}: {values.shape[1]} pixels per row, expected {int(np.prod(shape))} for {shape}")
    return values.reshape(-1, *shape), labels


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise ValueError(f"{path}: bad tensor magic")
    (ndim,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    off = 8 + 4 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(data) - off != 4 * count:
        raise ValueError(f"{path}: expected {4 * count} data bytes, found {len(data) - off}")
    return np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64).reshape(dims)


def write_toy_datasets(out_dir) -> list:
    """Regenerate every toy set as ``<name>_train.csv`` / ``<name>_test.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (gen, n_train, n_test, seed) in TOY_SETS.items():
        images, labels = gen(n_train + n_test, seed)
        for part, sl in (("train", slice(0, n_train)), ("test", slice(n_train, None))):
            path = out_dir / f"{name}_{part}.csv"
            write_image_csv(path, images[sl], labels[sl])
            written.append(path)
    return written
