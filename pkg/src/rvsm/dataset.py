"""Dataset directory format: manifest.csv plus one binary PGM per image.

The manifest has a header row and columns (filename, label, seed) with
label 0 = normal and 1 = shaky.  Images are P5 PGMs with maxval 255 and
pixel values 0 (background) / 255 (curve).  The reader accepts LF and
CRLF manifests.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .curvegen import Dataset


class DatasetError(ValueError):
    """Raised for unreadable or inconsistent dataset directories."""


def write_pgm(path, image) -> None:
    """Binary image (values {0, 1}) to a P5 PGM with 0/255 pixels."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise DatasetError(f"expected a 2-d image, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((img.astype(np.uint8) * 255).tobytes())


def read_pgm(path) -> np.ndarray:
    """P5 PGM back to a binary {0, 1} uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise DatasetError(f"{path}: expected maxval 255, got {maxval}")
    pos += 1  # single whitespace byte after the header
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return (raster.reshape(h, w) >= 128).astype(np.uint8)


def save_dataset(ds: Dataset, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    rows = []
    for i in range(len(ds)):
        name = f"sample_{i:05d}.pgm"
        write_pgm(os.path.join(directory, name), ds.images[i])
        rows.append((name, int(ds.labels[i]), int(ds.seeds[i])))
    with open(os.path.join(directory, "manifest.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", "label", "seed"])
        writer.writerows(rows)


def load_dataset(directory) -> Dataset:
    manifest = os.path.join(directory, "manifest.csv")
    if not os.path.isfile(manifest):
        raise DatasetError(f"no manifest.csv in {directory}")
    with open(manifest, newline="") as fh:  # csv handles LF and CRLF alike
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["filename", "label", "seed"]:
            raise DatasetError(f"{manifest}: unexpected header {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise DatasetError(f"{manifest}: no samples listed")
    images, labels, seeds = [], [], []
    for row in rows:
        if len(row) != 3:
            raise DatasetError(f"{manifest}: malformed row {row}")
        name, label, seed = row[0], int(row[1]), int(row[2])
        if label not in (0, 1):
            raise DatasetError(f"{manifest}: label must be 0 or 1, got {label}")
        images.append(read_pgm(os.path.join(directory, name)))
        labels.append(label)
        seeds.append(seed)
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DatasetError(f"{directory}: images disagree on shape: {sorted(shapes)}")
    return Dataset(
        np.stack(images), np.asarray(labels, dtype=np.int64), np.asarray(seeds, dtype=np.uint64)
    )
