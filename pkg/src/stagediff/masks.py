"""Cross-attention derived subject maps and binary masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, SpanError


@dataclass
class SubjectMap:
    values: np.ndarray  # (h_a, w_a) nonnegative
    branch: int
    subject: str


@dataclass
class BinaryMask:
    values: np.ndarray  # (h_a, w_a) uint8 in {0, 1}
    degenerate: bool


def subject_map(captured, span, branch=0, subject="") -> SubjectMap:
    """Mean over layers and the span's token columns, reshaped spatially."""
    start, end = span
    n_tokens = captured.cross_maps[0].shape[1]
    if not (0 <= start < end <= n_tokens):
        raise SpanError(f"span {span} outside token range [0, {n_tokens})")
    cols = np.stack([m[:, start:end].mean(axis=1) for m in captured.cross_maps])
    flat = cols.mean(axis=0)
    return SubjectMap(flat.reshape(captured.h, captured.w), branch, subject)


def binarize(m: SubjectMap, tau: float) -> BinaryMask:
    """Min-max normalize the map and threshold strictly above tau.

    A constant map (max-min < 1e-12) yields an all-zero mask flagged
    degenerate, so an unconfident map never overwrites unrelated regions.
    """
    if not (0.0 < tau < 1.0):
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}")
    values, degenerate = kernels.minmax_binarize(
        np.ascontiguousarray(m.values, dtype=np.float64), float(tau)
    )
    return BinaryMask(values, degenerate)


def align_mask(mask: BinaryMask, h: int, w: int) -> BinaryMask:
    """Nearest-neighbor block upsampling to the latent resolution."""
    mh, mw = mask.values.shape
    if h % mh or w % mw:
        raise ConfigError(
            f"target {h}x{w} is not an integer multiple of mask {mh}x{mw}"
        )
    if (h, w) == (mh, mw):
        return BinaryMask(mask.values.copy(), mask.degenerate)
    out = kernels.block_upsample(mask.values, h // mh, w // mw)
    return BinaryMask(out, mask.degenerate)
