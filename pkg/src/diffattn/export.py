"""Heatmap and table exports: binary PGM, CSV maps and training history."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import grid_shape

__all__ = ["HISTORY_COLUMNS", "pgm_bytes", "tile_maps", "write_pgm", "write_maps_csv", "write_history_csv", "read_pgm"]

HISTORY_COLUMNS = ("epoch", "loss", "acc", "triplet_sat", "rankcorr")


def pgm_bytes(image: np.ndarray) -> bytes:
    """Encode a 2-D array as 8-bit binary PGM (P5), scaled so its max is 255.

    Negative values clip to 0; an all-zero (or non-positive) image encodes
    as black.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    top = img.max() if img.size else 0.0
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    pix = np.zeros(img.shape, dtype=np.uint8) if top <= 0 else np.clip(np.rint(255.0 * img / top), 0, 255).astype(np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Decode a P5 image written by :func:`pgm_bytes`."""
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size != w * h:
        raise ValueError(f"PGM body has {pix.size} pixels, header says {w * h}")
    return pix.reshape(h, w)


def tile_maps(maps, scale: int = 8, gap: int = 1) -> np.ndarray:
    """Lay region maps out side by side on their spatial grid.

    Each length-``R`` map is reshaped to :func:`grid_shape`, upsampled by
    ``scale`` (nearest neighbour) and separated from the next by ``gap``
    blank columns.
    """
    maps = np.atleast_2d(np.asarray(maps, dtype=np.float64))
    rows, cols = grid_shape(maps.shape[1])
    tiles = [np.kron(m.reshape(rows, cols), np.ones((scale, scale))) for m in maps]
    blank = np.zeros((rows * scale, gap))
    out = []
    for i, t in enumerate(tiles):
        if i:
            out.append(blank)
        out.append(t)
    return np.hstack(out)


def write_pgm(path, image) -> None:
    Path(path).write_bytes(pgm_bytes(image))


def write_maps_csv(path, maps, labels=None) -> None:
    """One row per map: optional label then ``R`` floats (``repr`` precision)."""
    maps = np.atleast_2d(np.asarray(maps, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ([] if labels is None else ["map"]) + [f"r{i}" for i in range(maps.shape[1])]
        w.writerow(head)
        for i, m in enumerate(maps):
            lead = [] if labels is None else [labels[i]]
            w.writerow(lead + [repr(float(v)) for v in m])


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
