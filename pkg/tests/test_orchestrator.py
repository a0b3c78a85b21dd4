from pathlib import Path

import numpy as np
import pytest

from stagediff.denoiser import Schedule, ddim_step, forward, init_params, sample_init
from stagediff.errors import ConfigError, ShapeError
from stagediff.formats import read_latent
from stagediff.masks import BinaryMask, align_mask, binarize, subject_map
from stagediff.numerics import token_embedding
from stagediff.nurse import NurseConfig
from stagediff.orchestrator import PipelineConfig, alm, run
from stagediff.prompts import plan_from_text, tokenize

DATA = Path(__file__).parent / "data"
DOG_CAT = "a red dog with sunglasses and a blue cat with a necklace"


def small_cfg(**kw):
    base = dict(
        steps=10,
        h=8,
        w=8,
        d=16,
        dk=8,
        nurse=NurseConfig(steps=0),
    )
    base.update(kw)
    return PipelineConfig(**base)


def test_alm_selects_per_cell():
    rng = np.random.default_rng(0)
    z_prev = rng.normal(size=(8, 8, 3))
    z_hat = rng.normal(size=(8, 8, 3))
    mask = (rng.random((8, 8)) > 0.5).astype(np.uint8)
    out = alm(z_prev, z_hat, mask)
    for i in range(8):
        for j in range(8):
            src = z_hat if mask[i, j] else z_prev
            assert np.array_equal(out[i, j], src[i, j])


def test_alm_mask_extremes_are_bitwise():
    rng = np.random.default_rng(1)
    z_prev = rng.normal(size=(8, 8, 3))
    z_hat = rng.normal(size=(8, 8, 3))
    assert np.array_equal(alm(z_prev, z_hat, np.zeros((8, 8), np.uint8)), z_prev)
    assert np.array_equal(alm(z_prev, z_hat, np.ones((8, 8), np.uint8)), z_hat)


def test_alm_accepts_binary_mask_objects():
    z = np.zeros((4, 4, 3))
    mask = BinaryMask(np.ones((4, 4), dtype=np.uint8), False)
    assert np.array_equal(alm(z, z + 1, mask), z + 1)


def test_alm_shape_validation():
    z = np.zeros((4, 4, 3))
    with pytest.raises(ShapeError):
        alm(z, np.zeros((2, 2, 3)), np.zeros((4, 4), np.uint8))
    with pytest.raises(ShapeError):
        alm(z, z, np.zeros((2, 2), np.uint8))


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(steps=0)
    with pytest.raises(ConfigError):
        PipelineConfig(share_fraction=1.5)
    with pytest.raises(ConfigError):
        PipelineConfig(mask_source="detector")
    with pytest.raises(ConfigError):
        PipelineConfig(nurse_branch="all")


def test_run_is_deterministic():
    plan = plan_from_text(DOG_CAT, "A")
    cfg = small_cfg()
    r1 = run(plan, cfg, 5)
    r2 = run(plan, cfg, 5)
    for a, b in zip(r1.latents, r2.latents):
        assert np.array_equal(a, b)
    assert r1.labels == plan.labels


def test_full_share_identical_prompts_keeps_branches_equal():
    # With sharing over every step, no injection, and identical prompts the
    # branches never diverge.
    plan = plan_from_text("a dog and a cat", "A")
    plan.sub_prompts = [plan.sub_prompts[0]] * 3
    plan.labels = [0, 1, 2]
    plan.subjects = []
    plan.subject_spans = []
    plan.first_branch_spans = []
    plan.base_index = 1
    cfg = small_cfg(share_fraction=1.0, alm_enabled=False)
    result = run(plan, cfg, 3)
    for latent in result.latents[1:]:
        assert np.array_equal(latent, result.latents[0])


def test_zero_masks_make_detail_branches_track_base(monkeypatch):
    # When every mask comes back all-zero the chained splice copies the base
    # branch through all detail branches, bitwise, at each shared-step end.
    import stagediff.orchestrator as orch

    monkeypatch.setattr(
        orch, "binarize", lambda sm, tau: BinaryMask(
            np.zeros(sm.values.shape, dtype=np.uint8), True
        )
    )
    plan = plan_from_text(DOG_CAT, "C")
    cfg = small_cfg(steps=6, share_fraction=1.0)
    result = run(plan, cfg, 1, trace=True)
    for t in range(0, 6):  # latents recorded after each shared step
        base = result.trace[(plan.base_index, t)]
        for i in range(plan.base_index + 1, plan.n_branches):
            assert np.array_equal(result.trace[(i, t)], base)


def test_trace_covers_all_branches_and_steps():
    plan = plan_from_text(DOG_CAT, "C")
    cfg = small_cfg(steps=4)
    result = run(plan, cfg, 0, trace=True)
    expected_keys = {
        (i, t) for i in range(plan.n_branches) for t in range(0, 5)
    }
    assert set(result.trace.keys()) == expected_keys
    for i in range(plan.n_branches):
        assert np.array_equal(result.trace[(i, 0)], result.latents[i])


def test_all_branches_start_from_one_latent():
    plan = plan_from_text(DOG_CAT, "A")
    cfg = small_cfg(steps=3)
    result = run(plan, cfg, 11, trace=True)
    z0 = sample_init(11, cfg.h, cfg.w, cfg.c)
    for i in range(plan.n_branches):
        assert np.array_equal(result.trace[(i, 3)], z0)


def test_parallel_matches_serial():
    plan = plan_from_text(DOG_CAT, "B")
    cfg_serial = small_cfg(steps=8)
    cfg_par = small_cfg(steps=8, parallel=True)
    r1 = run(plan, cfg_serial, 2)
    r2 = run(plan, cfg_par, 2)
    for a, b in zip(r1.latents, r2.latents):
        assert np.allclose(a, b, atol=1e-12)


def test_attn_hook_sees_every_branch_every_step():
    plan = plan_from_text(DOG_CAT, "C")
    cfg = small_cfg(steps=5)
    seen = set()
    run(plan, cfg, 0, attn_hook=lambda t, i, cap: seen.add((t, i)))
    expected = {
        (t, i) for t in range(1, 6) for i in range(plan.n_branches)
    }
    assert seen == expected


def test_loss_rows_written_when_nursing():
    plan = plan_from_text(DOG_CAT, "C")
    cfg = small_cfg(steps=6, nurse=NurseConfig(steps=1, window=3))
    result = run(plan, cfg, 0)
    assert result.loss_rows
    ts = sorted({row[0] for row in result.loss_rows}, reverse=True)
    assert ts == [6, 5, 4]  # window of 3 leading timesteps
    for _t, _label, align, entropy, total in result.loss_rows:
        assert total == pytest.approx(align + cfg.nurse.lam * entropy, abs=1e-9)


def test_shared_step_reenacts_reference_recipe():
    # Independent re-execution of one shared step: layout forward, overridden
    # detail forwards, DDIM, then the chained masked splices.
    plan = plan_from_text(DOG_CAT, "C")
    cfg = small_cfg(steps=4, share_fraction=1.0)
    params = init_params(cfg.model_seed, cfg.h, cfg.w, cfg.c, cfg.d, cfg.dk, 1)
    result = run(plan, cfg, 6, params=params, trace=True)

    schedule = Schedule.linear(cfg.steps)
    embs = [
        np.stack([token_embedding(tok, params.d) for tok in tokenize(p)])
        for p in plan.sub_prompts
    ]
    t = cfg.steps
    zs = [sample_init(6, cfg.h, cfg.w, cfg.c) for _ in plan.sub_prompts]
    eps0, cap0 = forward(params, zs[0], embs[0], t)
    preds = [eps0]
    caps = [cap0]
    for i in range(1, plan.n_branches):
        eps, cap = forward(params, zs[i], embs[i], t, sa_override=cap0.self_maps)
        preds.append(eps)
        caps.append(cap)
    zs = [ddim_step(schedule, z, eps, t) for z, eps in zip(zs, preds)]
    for si in range(len(plan.subjects)):
        cur = plan.base_index + si + 1
        sm = subject_map(caps[cur], plan.subject_spans[si])
        bm = align_mask(binarize(sm, cfg.tau), cfg.h, cfg.w)
        zs[cur] = alm(zs[cur - 1], zs[cur], bm)
    for i in range(plan.n_branches):
        assert np.array_equal(result.trace[(i, t - 1)], zs[i])


def test_golden_teddy_fixture(numpy_backend):
    # Frozen end-to-end output on the default 16x16 model (numpy kernels).
    plan = plan_from_text("a red teddy bear wearing a green tracksuit", "A")
    result = run(plan, PipelineConfig(), 42)
    golden = read_latent(DATA / "golden_teddy_a_seed42.dpl")
    assert np.array_equal(result.output.astype("<f4"), golden.astype("<f4"))
