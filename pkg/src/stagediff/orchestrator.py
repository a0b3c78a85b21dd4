"""Multi-branch staged denoising with shared layout and masked injection.

All branches start from one latent. During the leading shared window the
layout branch (the first listed sub-prompt) runs with its own self-attention
and every other branch reuses those maps; after each shared step the
per-subject binary masks splice each detail branch's latent into its
predecessor's, chaining attribute injections left to right. The remaining
steps denoise every branch independently. The designated output is the last
branch's final grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .denoiser import (
    Schedule,
    ddim_step,
    forward,
    forward_many,
    init_params,
    sample_init,
)
from .errors import ConfigError, ShapeError
from .masks import align_mask, binarize, subject_map
from .numerics import token_embedding
from .nurse import NurseConfig, nurse_update
from .prompts import PromptPlan, tokenize

MASK_SOURCES = ("branch", "first")
NURSE_BRANCHES = ("attribute", "first")


@dataclass
class PipelineConfig:
    """Run parameters for the staged injection pipeline."""

    steps: int = 50
    share_fraction: float = 0.8
    tau: float = 0.5
    mask_source: str = "branch"  # "branch": the branch adding the attribute
    nurse: NurseConfig = field(default_factory=NurseConfig)
    nurse_branch: str = "attribute"  # which branch the refinement updates
    share_enabled: bool = True
    alm_enabled: bool = True
    parallel: bool = False
    # toy backbone dimensions
    model_seed: int = 0
    h: int = 16
    w: int = 16
    c: int = 3
    d: int = 32
    dk: int = 16
    n_layers: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not (0.0 <= self.share_fraction <= 1.0):
            raise ConfigError(
                f"share fraction must lie in [0, 1], got {self.share_fraction}"
            )
        if self.mask_source not in MASK_SOURCES:
            raise ConfigError(f"unknown mask source {self.mask_source!r}")
        if self.nurse_branch not in NURSE_BRANCHES:
            raise ConfigError(f"unknown nurse branch {self.nurse_branch!r}")


@dataclass
class RunResult:
    latents: list  # final per-branch grids
    labels: list  # p-index per branch
    loss_rows: list  # (t, branch label, align, entropy, total)
    trace: dict | None  # (branch list index, t) -> latent copy

    @property
    def output(self):
        return self.latents[-1]


def alm(z_prev, z_hat, mask):
    """Masked latent splice: z_prev + B ⊙ (z_hat − z_prev), B binary."""
    values = mask.values if hasattr(mask, "values") else np.asarray(mask)
    if z_prev.shape != z_hat.shape:
        raise ShapeError("latent shapes differ")
    if values.shape != z_prev.shape[:2]:
        raise ShapeError(
            f"mask shape {values.shape} does not match latent {z_prev.shape[:2]}"
        )
    return kernels.masked_blend(
        np.ascontiguousarray(z_prev),
        np.ascontiguousarray(z_hat),
        np.ascontiguousarray(values, dtype=np.uint8),
    )


def run(
    plan: PromptPlan,
    cfg: PipelineConfig,
    seed: int,
    params=None,
    trace: bool = False,
    attn_hook=None,
) -> RunResult:
    """Execute the full staged pipeline for one prompt plan.

    attn_hook, when given, is called as attn_hook(t, branch_index,
    captured) with every captured attention during shared and independent
    steps.
    """
    if params is None:
        params = init_params(
            cfg.model_seed, cfg.h, cfg.w, cfg.c, cfg.d, cfg.dk, cfg.n_layers
        )
    schedule = Schedule.linear(cfg.steps)
    n_b = plan.n_branches
    n_subj = len(plan.subjects)
    base = plan.base_index

    branch_tokens = [tokenize(p) for p in plan.sub_prompts]
    embs = [
        np.stack([token_embedding(tok, params.d) for tok in toks])
        for toks in branch_tokens
    ]

    z0 = sample_init(seed, params.h, params.w, params.c)
    zs = [z0.copy() for _ in range(n_b)]

    total = cfg.steps
    shared_steps = round(cfg.share_fraction * total) if cfg.share_enabled else 0
    nurse_window = min(cfg.nurse.window, shared_steps)

    trace_store = {} if trace else None
    if trace_store is not None:
        for i in range(n_b):
            trace_store[(i, total)] = zs[i].copy()
    loss_rows = []

    def record_loss(t, label, report):
        loss_rows.append((t, label, report.align, report.entropy, report.total))

    for step_i, t in enumerate(range(total, 0, -1)):
        shared = step_i < shared_steps
        nursing = cfg.nurse.steps > 0 and step_i < nurse_window and n_subj > 0
        if shared:
            if nursing and cfg.nurse_branch == "first":
                zs[0], rep = nurse_update(
                    params, zs[0], embs[0], plan.first_branch_spans, t, cfg.nurse
                )
                record_loss(t, plan.labels[0], rep)
            eps0, cap0 = forward(params, zs[0], embs[0], t)
            if attn_hook:
                attn_hook(t, 0, cap0)
            captured = [cap0]
            preds = [eps0]

            if nursing and cfg.nurse_branch == "attribute":
                for i in range(1, n_b):
                    subj_idx = i - base - 1
                    if 0 <= subj_idx < n_subj:
                        zs[i], rep = nurse_update(
                            params,
                            zs[i],
                            embs[i],
                            [plan.subject_spans[subj_idx]],
                            t,
                            cfg.nurse,
                            sa_override=cap0.self_maps,
                        )
                        record_loss(t, plan.labels[i], rep)

            if cfg.parallel and n_b > 1:
                results = forward_many(
                    params, zs[1:], embs[1:], t, sa_override=cap0.self_maps
                )
            else:
                results = [
                    forward(params, zs[i], embs[i], t, sa_override=cap0.self_maps)
                    for i in range(1, n_b)
                ]
            for i, (eps, cap) in zip(range(1, n_b), results):
                preds.append(eps)
                captured.append(cap)
                if attn_hook:
                    attn_hook(t, i, cap)

            zs = [ddim_step(schedule, z, eps, t) for z, eps in zip(zs, preds)]

            if cfg.alm_enabled:
                for si in range(n_subj):
                    prev_idx = base + si
                    cur_idx = base + si + 1
                    if cfg.mask_source == "branch":
                        src, span = cur_idx, plan.subject_spans[si]
                    else:
                        src, span = 0, plan.first_branch_spans[si]
                    sm = subject_map(captured[src], span, src, plan.subjects[si])
                    bm = align_mask(binarize(sm, cfg.tau), params.h, params.w)
                    zs[cur_idx] = alm(zs[prev_idx], zs[cur_idx], bm)
        else:
            if cfg.parallel and n_b > 1:
                results = forward_many(params, zs, embs, t)
            else:
                results = [
                    forward(params, zs[i], embs[i], t) for i in range(n_b)
                ]
            if attn_hook:
                for i, (_eps, cap) in enumerate(results):
                    attn_hook(t, i, cap)
            zs = [
                ddim_step(schedule, z, eps, t)
                for z, (eps, _cap) in zip(zs, results)
            ]

        if trace_store is not None:
            for i in range(n_b):
                trace_store[(i, t - 1)] = zs[i].copy()

    return RunResult(zs, list(plan.labels), loss_rows, trace_store)
