"""Hot elementwise kernels with numba-accelerated and pure-numpy paths.

The numba path is the default when numba imports successfully; setting the
environment variable ``DPP_NO_NUMBA=1`` (checked at import time) or calling
``use_numba(False)`` selects the pure-numpy fallback. Both paths implement
the same arithmetic; the comparison kernels (blend, binarize, upsample) are
bit-identical across paths, while softmax may differ by 1 ulp because numpy
and libm exp implementations round differently. Code whose output is frozen
into byte-exact fixtures pins the numpy path explicitly.

``benchmarks/bench_kernels.py`` compares both paths.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


_use_numba = HAVE_NUMBA and os.environ.get("DPP_NO_NUMBA", "") not in (
    "1",
    "true",
    "yes",
)


def use_numba(flag):
    """Select the kernel backend at runtime. Returns the previous setting."""
    global _use_numba
    prev = _use_numba
    _use_numba = bool(flag) and HAVE_NUMBA
    return prev


def using_numba():
    return _use_numba


# --- softmax over rows ---------------------------------------------------


def softmax_rows_np(m):
    mx = m.max(axis=1, keepdims=True)
    e = np.exp(m - mx)
    return e / e.sum(axis=1, keepdims=True)


@njit(cache=True)
def softmax_rows_nb(m):
    n, k = m.shape
    out = np.empty((n, k))
    for i in range(n):
        mx = m[i, 0]
        for j in range(1, k):
            if m[i, j] > mx:
                mx = m[i, j]
        s = 0.0
        for j in range(k):
            v = np.exp(m[i, j] - mx)
            out[i, j] = v
            s += v
        inv = 1.0 / s
        for j in range(k):
            out[i, j] *= inv
    return out


def softmax_rows(m):
    """Row-wise softmax with per-row max subtraction. m: (n, k) float64."""
    if _use_numba:
        return softmax_rows_nb(m)
    return softmax_rows_np(m)


# --- masked latent blend -------------------------------------------------


def masked_blend_np(z_prev, z_hat, mask):
    return np.where(mask[:, :, None] != 0, z_hat, z_prev)


@njit(cache=True)
def masked_blend_nb(z_prev, z_hat, mask):
    h, w, c = z_prev.shape
    out = np.empty((h, w, c))
    for i in range(h):
        for j in range(w):
            if mask[i, j] != 0:
                for k in range(c):
                    out[i, j, k] = z_hat[i, j, k]
            else:
                for k in range(c):
                    out[i, j, k] = z_prev[i, j, k]
    return out


def masked_blend(z_prev, z_hat, mask):
    """z_prev + mask ⊙ (z_hat − z_prev) for a binary mask broadcast over
    channels, evaluated as exact per-cell selection so the b=1 cells carry
    z_hat bit-for-bit."""
    if _use_numba:
        return masked_blend_nb(z_prev, z_hat, mask)
    return masked_blend_np(z_prev, z_hat, mask)


# --- min-max binarization ------------------------------------------------

DEGENERATE_EPS = 1e-12


def minmax_binarize_np(m, tau):
    mn = m.min()
    mx = m.max()
    if mx - mn < DEGENERATE_EPS:
        return np.zeros(m.shape, dtype=np.uint8), True
    norm = (m - mn) / (mx - mn)
    return (norm > tau).astype(np.uint8), False


@njit(cache=True)
def minmax_binarize_nb(m, tau):
    h, w = m.shape
    mn = m[0, 0]
    mx = m[0, 0]
    for i in range(h):
        for j in range(w):
            v = m[i, j]
            if v < mn:
                mn = v
            if v > mx:
                mx = v
    out = np.zeros((h, w), dtype=np.uint8)
    if mx - mn < DEGENERATE_EPS:
        return out, True
    inv = mx - mn
    for i in range(h):
        for j in range(w):
            if (m[i, j] - mn) / inv > tau:
                out[i, j] = 1
    return out, False


def minmax_binarize(m, tau):
    """Normalize m to [0, 1] and threshold strictly above tau.

    Returns (uint8 mask, degenerate flag); a constant map (max−min below
    1e-12) yields an all-zero mask with the flag set.
    """
    if _use_numba:
        return minmax_binarize_nb(m, tau)
    return minmax_binarize_np(m, tau)


# --- nearest-neighbor block upsampling -----------------------------------


def block_upsample_np(m, sy, sx):
    return np.repeat(np.repeat(m, sy, axis=0), sx, axis=1)


@njit(cache=True)
def block_upsample_nb(m, sy, sx):
    h, w = m.shape
    out = np.empty((h * sy, w * sx), dtype=m.dtype)
    for i in range(h * sy):
        for j in range(w * sx):
            out[i, j] = m[i // sy, j // sx]
    return out


def block_upsample(m, sy, sx):
    """Replicate each cell into an sy×sx block."""
    if _use_numba:
        return block_upsample_nb(m, sy, sx)
    return block_upsample_np(m, sy, sx)


def warmup():
    """Trigger JIT compilation of all numba kernels (no-op on numpy path)."""
    if not _use_numba:
        return
    m = np.zeros((2, 2))
    z = np.zeros((2, 2, 3))
    softmax_rows_nb(m)
    masked_blend_nb(z, z, np.zeros((2, 2), dtype=np.uint8))
    minmax_binarize_nb(m, 0.5)
    block_upsample_nb(m, 2, 2)
