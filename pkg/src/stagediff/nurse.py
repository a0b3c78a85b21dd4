"""Test-time attention refinement of the latent.

Combines a centroid-alignment term (squared distance between each subject
map's weighted centroid and its brightest point, the latter frozen during
differentiation) with an entropy term over the renormalized map, and walks
the latent down the analytic gradient of the total. A central
finite-difference oracle is provided for independent gradient validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import backprop_cross_to_latent, forward_with_cache
from .errors import DegenerateMapError
from .masks import subject_map

_TINY = 1e-300


@dataclass
class NurseConfig:
    lam: float = 1.0  # entropy weight in the combined objective
    alpha: float = 0.05  # gradient step size
    steps: int = 1  # inner iterations per timestep; 0 disables
    window: int = 10  # number of leading timesteps to refine

    def __post_init__(self):
        if self.lam < 0 or self.alpha <= 0 or self.steps < 0:
            raise ValueError("invalid nurse configuration")


@dataclass
class LossReport:
    align: float
    entropy: float
    total: float
    centroids: list = field(default_factory=list)
    peaks: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # subject indices left out


def centroid(m):
    """Weighted center (c_w, c_h) of a nonnegative map."""
    values = m.values if hasattr(m, "values") else m
    s = values.sum()
    if s <= 0.0:
        raise DegenerateMapError("centroid of an all-zero map is undefined")
    h_a, w_a = values.shape
    ws = np.arange(w_a)
    hs = np.arange(h_a)
    c_w = (values * ws[None, :]).sum() / s
    c_h = (values * hs[:, None]).sum() / s
    return c_w, c_h


def peak(m):
    """(w, h) of the maximum entry; ties go to the smallest row-major index."""
    values = m.values if hasattr(m, "values") else m
    idx = int(np.argmax(values))
    h_a, w_a = values.shape
    return idx % w_a, idx // w_a


def align_loss(maps):
    """Sum of squared centroid-to-peak distances over subject maps."""
    total = 0.0
    for m in maps:
        c_w, c_h = centroid(m)
        p_w, p_h = peak(m)
        total += (c_w - p_w) ** 2 + (c_h - p_h) ** 2
    return total


def entropy_loss(m):
    """Shannon entropy (natural log) of the map renormalized to sum 1."""
    values = m.values if hasattr(m, "values") else m
    s = values.sum()
    if s <= 0.0:
        raise DegenerateMapError("entropy of an all-zero map is undefined")
    q = values / s
    return float(-(q * np.log(np.maximum(q, _TINY))).sum() if q.size else 0.0)


def _align_grad(values):
    # d/dm of ||centroid - frozen peak||^2 for one map.
    s = values.sum()
    c_w, c_h = centroid(values)
    p_w, p_h = peak(values)
    h_a, w_a = values.shape
    ws = np.arange(w_a)[None, :]
    hs = np.arange(h_a)[:, None]
    loss = (c_w - p_w) ** 2 + (c_h - p_h) ** 2
    grad = (2.0 / s) * ((c_w - p_w) * (ws - c_w) + (c_h - p_h) * (hs - c_h))
    return loss, grad


def _entropy_grad(values):
    s = values.sum()
    q = values / s
    logq = np.log(np.maximum(q, _TINY))
    ent = float(-(q * logq).sum())
    grad = (-logq - ent) / s
    return ent, grad


def _losses_and_map_grads(values_list, lam):
    """Per-map loss terms and dL_total/dmap; degenerate maps are skipped."""
    report = LossReport(0.0, 0.0, 0.0)
    grads = []
    for i, values in enumerate(values_list):
        if values.sum() <= 0.0:
            report.skipped.append(i)
            grads.append(None)
            continue
        a_loss, a_grad = _align_grad(values)
        e_loss, e_grad = _entropy_grad(values)
        report.align += a_loss
        report.entropy += e_loss
        report.centroids.append(centroid(values))
        report.peaks.append(peak(values))
        grads.append(a_grad + lam * e_grad)
    report.total = report.align + lam * report.entropy
    return report, grads


def _subject_values(params, cache, spans):
    return [
        subject_map(cache.captured, span, subject=str(i)).values
        for i, span in enumerate(spans)
    ]


def nurse_update(params, z, token_emb, spans, t, cfg: NurseConfig, sa_override=None):
    """K gradient-descent refinements of z against the combined loss.

    Returns the updated latent and a LossReport of the post-update state
    (the initial state when cfg.steps == 0).
    """
    z = np.array(z, dtype=np.float64)
    n_layers = params.n_layers
    for _ in range(cfg.steps):
        cache = forward_with_cache(params, z, token_emb, t, sa_override)
        values_list = _subject_values(params, cache, spans)
        _report, grads = _losses_and_map_grads(values_list, cfg.lam)
        d_cross = [
            np.zeros_like(m) for m in cache.captured.cross_maps
        ]
        for span, grad in zip(spans, grads):
            if grad is None:
                continue
            start, end = span
            flat = grad.reshape(-1) / (n_layers * (end - start))
            for li in range(n_layers):
                d_cross[li][:, start:end] += flat[:, None]
        dz = backprop_cross_to_latent(params, cache, d_cross)
        z = z - cfg.alpha * dz
    cache = forward_with_cache(params, z, token_emb, t, sa_override)
    values_list = _subject_values(params, cache, spans)
    report, _ = _losses_and_map_grads(values_list, cfg.lam)
    return z, report


def total_loss_at(params, z, token_emb, spans, t, lam, sa_override=None):
    """Combined loss at a latent; the scalar the nurse gradient descends."""
    cache = forward_with_cache(params, z, token_emb, t, sa_override)
    values_list = _subject_values(params, cache, spans)
    report, _ = _losses_and_map_grads(values_list, lam)
    return report.total


def analytic_gradient(params, z, token_emb, spans, t, lam, sa_override=None):
    """Closed-form dL_total/dz via backprop through the attention path."""
    cache = forward_with_cache(params, z, token_emb, t, sa_override)
    values_list = _subject_values(params, cache, spans)
    _report, grads = _losses_and_map_grads(values_list, lam)
    d_cross = [np.zeros_like(m) for m in cache.captured.cross_maps]
    for span, grad in zip(spans, grads):
        if grad is None:
            continue
        start, end = span
        flat = grad.reshape(-1) / (params.n_layers * (end - start))
        for li in range(params.n_layers):
            d_cross[li][:, start:end] += flat[:, None]
    return backprop_cross_to_latent(params, cache, d_cross)


def fd_gradient(loss_at, z, eps, coords=None):
    """Central finite differences of a scalar function of the latent.

    coords: optional iterable of flat indices; defaults to every coordinate.
    Returns a grid shaped like z (zeros at unprobed coordinates).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    grad = np.zeros_like(z, dtype=np.float64)
    flat = grad.reshape(-1)
    if coords is None:
        coords = range(z.size)
    for idx in coords:
        zp = np.array(z, dtype=np.float64)
        zp.reshape(-1)[idx] += eps
        zm = np.array(z, dtype=np.float64)
        zm.reshape(-1)[idx] -= eps
        flat[idx] = (loss_at(zp) - loss_at(zm)) / (2.0 * eps)
    return grad
