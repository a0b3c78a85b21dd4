"""On-disk formats: latent dumps, PGM/PPM images, manifests, CSV reports.

Latent dump (.dpl): magic ``DPP1``, three 32-bit little-endian unsigned
integers H, W, C, then H*W*C 32-bit little-endian IEEE-754 floats in
row-major, channel-last order. Attention and mask dumps are binary PGM
(P5, maxval 255); masks use exactly 0 and 255, continuous maps are min-max
scaled. The final image is a P6 PPM of the latent clamped to [0, 1].
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ShapeError

MAGIC = b"DPP1"


def write_latent(path, grid):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ShapeError(f"latent dump expects HxWxC, got shape {grid.shape}")
    h, w, c = grid.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(grid.astype("<f4").tobytes())


def read_latent(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ShapeError(f"bad latent magic {magic!r} in {path}")
        h, w, c = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(h * w * c * 4), dtype="<f4")
    if data.size != h * w * c:
        raise ShapeError(f"truncated latent dump {path}")
    return data.astype(np.float64).reshape(h, w, c)


def write_pgm(path, values, binary_mask=False):
    """Grayscale dump; min-max scaled, or exact 0/255 for binary masks."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"PGM dump expects a 2D array, got {arr.shape}")
    if binary_mask:
        scaled = np.where(arr != 0, 255, 0).astype(np.uint8)
    else:
        lo, hi = arr.min(), arr.max()
        if hi - lo < 1e-300:
            scaled = np.zeros(arr.shape, dtype=np.uint8)
        else:
            scaled = np.round((arr - lo) / (hi - lo) * 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def write_ppm(path, image):
    """RGB dump of an HxWx3 grid clamped to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"PPM dump expects HxWx3, got {img.shape}")
    scaled = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def read_ppm(path):
    """Read a maxval-255 P6 PPM back into a float HxWx3 grid in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ShapeError(f"{path} is not a P6 PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ShapeError(f"unsupported PPM maxval {maxval}")
    raw = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8)
    return raw.reshape(h, w, 3).astype(np.float64) / 255.0


def write_manifest(path, manifest: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_loss_csv(path, rows):
    """One row per (step, branch): t,branch,align,entropy,total."""
    with open(path, "w", encoding="utf-8") as fh:
        for t, branch, align, entropy, total in rows:
            fh.write(
                f"{t},{branch},{float(align)!r},{float(entropy)!r},"
                f"{float(total)!r}\n"
            )
