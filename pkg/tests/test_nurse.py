import numpy as np
import pytest

from stagediff.denoiser import init_params, sample_init
from stagediff.errors import DegenerateMapError
from stagediff.numerics import token_embedding
from stagediff.nurse import (
    NurseConfig,
    align_loss,
    analytic_gradient,
    centroid,
    entropy_loss,
    fd_gradient,
    nurse_update,
    peak,
    total_loss_at,
)


def setup_case(seed=0):
    params = init_params(7, h=8, w=8, c=3, d=16, dk=8, n_layers=1)
    tokens = "a red dog and a blue cat".split()
    emb = np.stack([token_embedding(tok, params.d) for tok in tokens])
    spans = [(2, 3), (6, 7)]
    z = sample_init(seed, 8, 8, 3)
    return params, emb, spans, z


def test_centroid_of_symmetric_map_is_center():
    m = np.ones((5, 5))
    assert centroid(m) == (2.0, 2.0)


def test_centroid_weighted():
    m = np.zeros((4, 4))
    m[0, 0] = 1.0
    m[0, 3] = 3.0
    c_w, c_h = centroid(m)
    assert c_w == pytest.approx(2.25)
    assert c_h == 0.0


def test_centroid_rejects_zero_map():
    with pytest.raises(DegenerateMapError):
        centroid(np.zeros((3, 3)))


def test_peak_position_and_tie_break():
    m = np.zeros((3, 4))
    m[1, 2] = 5.0
    assert peak(m) == (2, 1)
    ties = np.ones((2, 2))
    assert peak(ties) == (0, 0)


def test_align_loss_zero_iff_centroid_equals_peak():
    one_hot = np.zeros((5, 5))
    one_hot[2, 2] = 1.0
    assert align_loss([one_hot]) == 0.0
    spread = np.ones((5, 5))
    spread[0, 0] = 2.0  # peak at a corner, centroid near the center
    assert align_loss([spread]) > 0.0


def test_entropy_closed_forms():
    uniform4 = np.full((2, 2), 0.25)
    assert entropy_loss(uniform4) == pytest.approx(np.log(4.0), abs=1e-12)
    one_hot = np.zeros((2, 2))
    one_hot[0, 1] = 1.0
    assert entropy_loss(one_hot) == pytest.approx(0.0, abs=1e-12)
    # Entropy only sees the renormalized map.
    assert entropy_loss(uniform4 * 7.0) == pytest.approx(np.log(4.0), abs=1e-12)


def test_entropy_rejects_zero_map():
    with pytest.raises(DegenerateMapError):
        entropy_loss(np.zeros((2, 2)))


def test_total_loss_is_align_plus_weighted_entropy():
    params, emb, spans, z = setup_case()
    lam = 0.7
    l0 = total_loss_at(params, z, emb, spans, 25, 0.0)
    l_ent_only = (
        total_loss_at(params, z, emb, spans, 25, 1.0) - l0
    )
    total = total_loss_at(params, z, emb, spans, 25, lam)
    assert total == pytest.approx(l0 + lam * l_ent_only, abs=1e-9)


def test_analytic_gradient_matches_finite_differences():
    params, emb, spans, z = setup_case()
    t = 25
    lam = 1.0
    grad = analytic_gradient(params, z, emb, spans, t, lam)
    rng = np.random.default_rng(0)
    coords = rng.choice(z.size, 20, replace=False)
    fd = fd_gradient(
        lambda zz: total_loss_at(params, zz, emb, spans, t, lam), z, 1e-4, coords
    )
    ga = grad.reshape(-1)[coords]
    fa = fd.reshape(-1)[coords]
    rel = np.abs(ga - fa) / np.maximum(1e-8, np.abs(ga) + np.abs(fa))
    assert float(rel.max()) <= 1e-4


def test_gradient_check_with_self_attention_override():
    params, emb, spans, z = setup_case(seed=4)
    t = 30
    lam = 1.0
    from stagediff.denoiser import forward

    _eps, cap = forward(params, sample_init(9, 8, 8, 3), emb, t)
    override = cap.self_maps
    grad = analytic_gradient(params, z, emb, spans, t, lam, sa_override=override)
    rng = np.random.default_rng(1)
    coords = rng.choice(z.size, 10, replace=False)
    fd = fd_gradient(
        lambda zz: total_loss_at(
            params, zz, emb, spans, t, lam, sa_override=override
        ),
        z,
        1e-4,
        coords,
    )
    ga = grad.reshape(-1)[coords]
    fa = fd.reshape(-1)[coords]
    rel = np.abs(ga - fa) / np.maximum(1e-8, np.abs(ga) + np.abs(fa))
    assert float(rel.max()) <= 1e-4


def test_nurse_update_reduces_total_loss():
    params, emb, spans, z = setup_case(seed=2)
    cfg = NurseConfig(lam=1.0, alpha=0.05, steps=10)
    before = total_loss_at(params, z, emb, spans, 25, cfg.lam)
    z_new, report = nurse_update(params, z, emb, spans, 25, cfg)
    assert report.total < before
    assert not np.array_equal(z_new, z)


def test_nurse_update_zero_steps_is_identity():
    params, emb, spans, z = setup_case()
    cfg = NurseConfig(steps=0)
    z_new, report = nurse_update(params, z, emb, spans, 25, cfg)
    assert np.array_equal(z_new, z)
    assert report.total == pytest.approx(
        total_loss_at(params, z, emb, spans, 25, cfg.lam), abs=1e-12
    )


def test_nurse_config_validation():
    with pytest.raises(ValueError):
        NurseConfig(alpha=0.0)
    with pytest.raises(ValueError):
        NurseConfig(lam=-1.0)
    with pytest.raises(ValueError):
        NurseConfig(steps=-1)


def test_fd_gradient_validates_eps():
    with pytest.raises(ValueError):
        fd_gradient(lambda z: 0.0, np.zeros((2, 2, 3)), 0.0)
