"""Deterministic numeric kernel: softmax, seeded PRNG, hash embeddings.

The pseudo-random stream is counter-based SplitMix64 feeding a Box–Muller
transform, so draws are a pure function of (seed, position) and prefixes of
longer draws match shorter ones exactly. This path intentionally has a
single implementation (vectorized numpy) so its output is bit-stable
regardless of the kernel backend selected in :mod:`stagediff.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericInputError, PromptParseError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_TWO_NEG53 = 2.0**-53

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def softmax_rows(m):
    """Row-stochastic softmax of a 2D float matrix.

    Raises NumericInputError on non-finite input.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise NumericInputError(f"expected 2D matrix, got ndim={m.ndim}")
    if not np.isfinite(m).all():
        raise NumericInputError("softmax input contains NaN or Inf")
    return kernels.softmax_rows(m)


@dataclass
class SeededStream:
    """Position-addressed gaussian stream; copyable, single-owner."""

    seed: int
    position: int = 0


def _splitmix_mix(idx):
    # idx: uint64 array of uniform indices; returns mixed uint64 outputs.
    z = idx
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def _uniforms(seed, idx):
    # u in (0, 1], from the top 53 bits of the mixed counter state.
    state = _U64(seed & 0xFFFFFFFFFFFFFFFF) + (idx + _U64(1)) * _GAMMA
    bits = _splitmix_mix(state)
    return ((bits >> _U64(11)).astype(np.float64) + 1.0) * _TWO_NEG53


def seeded_gaussian(stream: SeededStream, n: int):
    """Draw n standard-normal values, advancing the stream position.

    Value i of the stream pairs uniforms (2⌊i/2⌋, 2⌊i/2⌋+1) through
    Box–Muller: even positions take the cosine leg, odd the sine leg, so
    any draw is a pure function of (seed, position range).
    """
    if n < 1:
        raise NumericInputError(f"draw count must be >= 1, got {n}")
    with np.errstate(over="ignore"):
        pos = np.arange(stream.position, stream.position + n, dtype=np.uint64)
        pair = (pos // _U64(2)) * _U64(2)
        u1 = _uniforms(stream.seed, pair)
        u2 = _uniforms(stream.seed, pair + _U64(1))
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.where(pos % _U64(2) == 0, r * np.cos(theta), r * np.sin(theta))
    stream.position += n
    return out


def seeded_uniform(stream: SeededStream, n: int):
    """Draw n uniforms in (0, 1], advancing the stream position."""
    if n < 1:
        raise NumericInputError(f"draw count must be >= 1, got {n}")
    with np.errstate(over="ignore"):
        pos = np.arange(stream.position, stream.position + n, dtype=np.uint64)
        out = _uniforms(stream.seed, pos)
    stream.position += n
    return out


def fnv1a_64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of text."""
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def token_embedding(token: str, dim: int):
    """Deterministic unit vector for a token: FNV-1a seeds a gaussian draw."""
    if not token:
        raise PromptParseError("empty token has no embedding")
    if dim < 2:
        raise NumericInputError(f"embedding dim must be >= 2, got {dim}")
    v = seeded_gaussian(SeededStream(fnv1a_64(token)), dim)
    return v / np.linalg.norm(v)
