"""Toy latent-diffusion backbone: attention blocks plus a DDIM sampler.

The latent is an H×W×C grid with C=3, so the final latent doubles as the
output image. Each block runs self-attention (optionally replaced by an
externally supplied probability map), cross-attention over token
embeddings, both with residual connections, and the stack ends in a
position-wise tanh mixer conditioned on a sinusoidal timestep embedding.
Weights are random but fully determined by one seed, which is all the
pipeline's guarantees need: every property checked downstream is algebraic,
not perceptual.

``forward_with_cache`` keeps the intermediates needed by
:func:`backprop_cross_to_latent`, the analytic gradient route used for
test-time attention refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericInputError, ShapeError
from .numerics import SeededStream, seeded_gaussian, softmax_rows


@dataclass
class ModelParams:
    seed: int
    h: int
    w: int
    c: int
    d: int
    dk: int
    n_layers: int
    w_in: np.ndarray  # (c, d)
    pos_emb: np.ndarray  # (h*w, d)
    layers: list  # per layer dict of projection matrices
    w_mix1: np.ndarray  # (d, d)
    w_mix2: np.ndarray  # (d, c)

    @property
    def hw(self):
        return self.h * self.w


@dataclass
class Schedule:
    """Cumulative alpha-bar values for a linear beta schedule."""

    steps: int
    alpha_bar: np.ndarray  # length steps+1, alpha_bar[0] == 1

    @classmethod
    def linear(cls, steps, beta_start=1e-4, beta_end=0.02):
        if steps < 1:
            raise ConfigError(f"steps must be >= 1, got {steps}")
        betas = np.linspace(beta_start, beta_end, steps)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(steps, abar)


@dataclass
class CapturedAttention:
    """Row-stochastic maps captured from one forward pass."""

    h: int
    w: int
    self_maps: list  # per layer (HW, HW)
    cross_maps: list  # per layer (HW, L)


def init_params(seed, h=16, w=16, c=3, d=32, dk=16, n_layers=1) -> ModelParams:
    """Generate all projection matrices from one seed, scaled by 1/sqrt(d)."""
    if min(h, w, c, n_layers) <= 0:
        raise ConfigError("latent dims and layer count must be positive")
    if h > 64 or w > 64:
        raise ConfigError(f"desk-scale latents are capped at 64x64, got {h}x{w}")
    if d < 4 or dk < 4:
        raise ConfigError(f"model widths must be >= 4, got d={d}, dk={dk}")
    stream = SeededStream(seed)
    scale = 1.0 / np.sqrt(d)

    def draw(*shape):
        n = int(np.prod(shape))
        return seeded_gaussian(stream, n).reshape(shape) * scale

    layers = []
    for _ in range(n_layers):
        layers.append(
            {
                "wq": draw(d, dk),
                "wk": draw(d, dk),
                "wv": draw(d, d),
                "wq_cross": draw(d, dk),
                "wk_text": draw(d, dk),
                "wv_text": draw(d, d),
            }
        )
    return ModelParams(
        seed=seed,
        h=h,
        w=w,
        c=c,
        d=d,
        dk=dk,
        n_layers=n_layers,
        w_in=draw(c, d),
        pos_emb=draw(h * w, d),
        layers=layers,
        w_mix1=draw(d, d),
        w_mix2=draw(d, c),
    )


def timestep_embedding(t, d):
    """Sinusoidal embedding of an integer timestep, shape (d,)."""
    half = d // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if emb.size < d:
        emb = np.concatenate([emb, np.zeros(d - emb.size)])
    return emb


@dataclass
class ForwardCache:
    x0: np.ndarray
    layers: list = field(default_factory=list)  # per-layer intermediates
    captured: CapturedAttention | None = None
    eps: np.ndarray | None = None


def _normalize_override(params, sa_override):
    if sa_override is None:
        return None
    maps = sa_override if isinstance(sa_override, (list, tuple)) else [
        sa_override
    ] * params.n_layers
    if len(maps) != params.n_layers:
        raise ShapeError(
            f"override supplies {len(maps)} maps for {params.n_layers} layers"
        )
    hw = params.hw
    for m in maps:
        if m.shape != (hw, hw):
            raise ShapeError(
                f"override map shape {m.shape} does not match ({hw}, {hw})"
            )
    return maps


def forward_with_cache(params, z, token_emb, t, sa_override=None):
    """One denoiser pass keeping intermediates for gradient backprop.

    token_emb: (L, d) rows from token_embedding. Returns a ForwardCache
    whose .eps is the (h, w, c) noise prediction and .captured holds the
    per-layer attention maps (overridden self maps are reported as given).
    """
    if z.shape != (params.h, params.w, params.c):
        raise ShapeError(f"latent shape {z.shape} does not match params")
    if not np.isfinite(z).all():
        raise NumericInputError("latent contains NaN or Inf")
    override = _normalize_override(params, sa_override)
    scale = 1.0 / np.sqrt(params.dk)
    temb = timestep_embedding(t, params.d)

    x = z.reshape(params.hw, params.c) @ params.w_in + params.pos_emb + temb
    cache = ForwardCache(x0=x)
    self_maps = []
    cross_maps = []
    for li, lp in enumerate(params.layers):
        x_in = x
        q = x_in @ lp["wq"]
        k = x_in @ lp["wk"]
        v = x_in @ lp["wv"]
        if override is not None:
            a_self = override[li]
            overridden = True
        else:
            a_self = softmax_rows(q @ k.T * scale)
            overridden = False
        x_mid = x_in + a_self @ v

        q_cross = x_mid @ lp["wq_cross"]
        k_text = token_emb @ lp["wk_text"]
        v_text = token_emb @ lp["wv_text"]
        a_cross = softmax_rows(q_cross @ k_text.T * scale)
        x = x_mid + a_cross @ v_text

        self_maps.append(a_self)
        cross_maps.append(a_cross)
        cache.layers.append(
            {
                "x_in": x_in,
                "q": q,
                "k": k,
                "v": v,
                "a_self": a_self,
                "overridden": overridden,
                "x_mid": x_mid,
                "k_text": k_text,
                "v_text": v_text,
                "a_cross": a_cross,
            }
        )
    mix = np.tanh(x @ params.w_mix1)
    cache.eps = (mix @ params.w_mix2).reshape(params.h, params.w, params.c)
    cache.captured = CapturedAttention(params.h, params.w, self_maps, cross_maps)
    return cache


def forward(params, z, token_emb, t, sa_override=None):
    """Noise prediction plus captured attention for one latent."""
    cache = forward_with_cache(params, z, token_emb, t, sa_override)
    return cache.eps, cache.captured


def _forward_batch(params, zs, embs, t, override):
    # All embs share one token count; batch every matmul across branches.
    scale = 1.0 / np.sqrt(params.dk)
    temb = timestep_embedding(t, params.d)
    b = len(zs)
    hw = params.hw
    zb = np.stack(zs).reshape(b, hw, params.c)
    eb = np.stack(embs)
    x = zb @ params.w_in + params.pos_emb + temb
    self_maps = []
    cross_maps = []
    for li, lp in enumerate(params.layers):
        if override is not None:
            a_self = np.broadcast_to(override[li], (b, hw, hw))
        else:
            q = x @ lp["wq"]
            k = x @ lp["wk"]
            logits = q @ k.transpose(0, 2, 1) * scale
            a_self = softmax_rows(logits.reshape(b * hw, hw)).reshape(
                b, hw, hw
            )
        x_mid = x + a_self @ (x @ lp["wv"])
        k_text = eb @ lp["wk_text"]
        v_text = eb @ lp["wv_text"]
        logits_c = (x_mid @ lp["wq_cross"]) @ k_text.transpose(0, 2, 1) * scale
        ll = logits_c.shape[2]
        a_cross = softmax_rows(logits_c.reshape(b * hw, ll)).reshape(
            b, hw, ll
        )
        x = x_mid + a_cross @ v_text
        self_maps.append(a_self)
        cross_maps.append(a_cross)
    eps = (np.tanh(x @ params.w_mix1) @ params.w_mix2).reshape(
        b, params.h, params.w, params.c
    )
    out = []
    for i in range(b):
        cap = CapturedAttention(
            params.h,
            params.w,
            [m[i] for m in self_maps],
            [m[i] for m in cross_maps],
        )
        out.append((eps[i], cap))
    return out


def forward_many(params, zs, embs, t, sa_override=None):
    """Forward a set of branches at one timestep, batching the matmuls.

    Branches are grouped by token count so each group runs as stacked 3D
    matmuls; per-branch results match :func:`forward` up to BLAS rounding.
    Returns a list of (noise_pred, CapturedAttention) in input order.
    """
    override = _normalize_override(params, sa_override)
    for z in zs:
        if z.shape != (params.h, params.w, params.c):
            raise ShapeError(f"latent shape {z.shape} does not match params")
    groups = {}
    for i, emb in enumerate(embs):
        groups.setdefault(emb.shape[0], []).append(i)
    results = [None] * len(zs)
    for idxs in groups.values():
        batch = _forward_batch(
            params, [zs[i] for i in idxs], [embs[i] for i in idxs], t, override
        )
        for i, r in zip(idxs, batch):
            results[i] = r
    return results


def _softmax_backward(a, da):
    # Given a = softmax(rows of logits) and dL/da, return dL/dlogits.
    return a * (da - (da * a).sum(axis=1, keepdims=True))


def backprop_cross_to_latent(params, cache, d_cross_maps):
    """Gradient of a loss on the cross-attention maps w.r.t. the latent.

    d_cross_maps: per layer array dL/d(a_cross) of shape (HW, L), zeros
    where unused. Token embeddings and (when overridden) self maps are
    constants. Returns dL/dz of shape (h, w, c).
    """
    scale = 1.0 / np.sqrt(params.dk)
    dx = np.zeros_like(cache.x0)
    for li in range(params.n_layers - 1, -1, -1):
        lc = cache.layers[li]
        lp = params.layers[li]
        # x_out = x_mid + a_cross @ v_text
        da_cross = d_cross_maps[li] + dx @ lc["v_text"].T
        dlogits_c = _softmax_backward(lc["a_cross"], da_cross) * scale
        dq_cross = dlogits_c @ lc["k_text"]
        dx_mid = dx + dq_cross @ lp["wq_cross"].T
        # x_mid = x_in + a_self @ v
        dx_in = dx_mid.copy()
        dv = lc["a_self"].T @ dx_mid
        dx_in += dv @ lp["wv"].T
        if not lc["overridden"]:
            da_self = dx_mid @ lc["v"].T
            dlogits_s = _softmax_backward(lc["a_self"], da_self) * scale
            dx_in += (dlogits_s @ lc["k"]) @ lp["wq"].T
            dx_in += (dlogits_s.T @ lc["q"]) @ lp["wk"].T
        dx = dx_in
    dz = dx @ params.w_in.T
    return dz.reshape(params.h, params.w, params.c)


def ddim_step(schedule, z, noise_pred, t):
    """Deterministic DDIM update from step t to t-1."""
    if t < 1 or t > schedule.steps:
        raise IndexError(f"timestep {t} outside [1, {schedule.steps}]")
    if noise_pred.shape != z.shape:
        raise ShapeError("noise prediction shape does not match latent")
    at = schedule.alpha_bar[t]
    at_prev = schedule.alpha_bar[t - 1]
    z0 = (z - np.sqrt(1.0 - at) * noise_pred) / np.sqrt(at)
    return np.sqrt(at_prev) * z0 + np.sqrt(1.0 - at_prev) * noise_pred


def sample_init(seed, h=16, w=16, c=3):
    """Shared standard-normal initial latent for all branches."""
    if min(h, w, c) <= 0:
        raise ConfigError("latent dims must be positive")
    stream = SeededStream(seed)
    return seeded_gaussian(stream, h * w * c).reshape(h, w, c)
