import numpy as np
import pytest

from stagediff.denoiser import forward, init_params, sample_init
from stagediff.errors import ConfigError, SpanError
from stagediff.masks import BinaryMask, SubjectMap, align_mask, binarize, subject_map
from stagediff.numerics import token_embedding


def captured_for(text, seed=0):
    params = init_params(7, h=8, w=8, c=3, d=16, dk=8, n_layers=2)
    emb = np.stack([token_embedding(tok, params.d) for tok in text.split()])
    z = sample_init(seed, 8, 8, 3)
    _eps, cap = forward(params, z, emb, 25)
    return cap


def test_subject_map_shape_and_nonnegative():
    cap = captured_for("a red dog and a cat")
    sm = subject_map(cap, (2, 3), branch=1, subject="dog")
    assert sm.values.shape == (8, 8)
    assert (sm.values >= 0).all()
    assert sm.subject == "dog"


def test_subject_map_is_mean_over_layers_and_columns():
    cap = captured_for("a red dog and a cat")
    span = (2, 4)
    sm = subject_map(cap, span)
    manual = np.mean(
        [m[:, span[0] : span[1]].mean(axis=1) for m in cap.cross_maps], axis=0
    ).reshape(8, 8)
    assert np.allclose(sm.values, manual, atol=1e-15)


def test_subject_map_span_validation():
    cap = captured_for("a red dog")
    with pytest.raises(SpanError):
        subject_map(cap, (2, 2))
    with pytest.raises(SpanError):
        subject_map(cap, (0, 99))
    with pytest.raises(SpanError):
        subject_map(cap, (-1, 1))


def test_binarize_oracle_2x2():
    # Hand-worked example: normalized map is [[0, 1/3], [2/3, 1]].
    m = SubjectMap(np.array([[0.1, 0.2], [0.3, 0.4]]), 0, "")
    mask = binarize(m, 0.5)
    assert mask.values.tolist() == [[0, 0], [1, 1]]
    assert not mask.degenerate
    # Strict threshold: a cell exactly at tau stays off.
    mask2 = binarize(SubjectMap(np.array([[0.0, 0.5], [1.0, 0.25]]), 0, ""), 0.5)
    assert mask2.values.tolist() == [[0, 0], [1, 0]]


def test_binarize_degenerate_constant_map():
    m = SubjectMap(np.full((4, 4), 0.7), 0, "")
    mask = binarize(m, 0.5)
    assert mask.degenerate
    assert not mask.values.any()


def test_binarize_affine_invariance():
    rng = np.random.default_rng(0)
    values = rng.random((8, 8))
    ref = binarize(SubjectMap(values, 0, ""), 0.4).values
    for a, c in ((2.0, 0.0), (0.5, 3.0), (10.0, -1.0)):
        got = binarize(SubjectMap(a * values + c, 0, ""), 0.4).values
        assert np.array_equal(got, ref)


def test_binarize_tau_monotonicity():
    rng = np.random.default_rng(1)
    m = SubjectMap(rng.random((8, 8)), 0, "")
    counts = [int(binarize(m, tau).values.sum()) for tau in (0.2, 0.4, 0.6, 0.8)]
    assert counts == sorted(counts, reverse=True)


def test_binarize_tau_validation():
    m = SubjectMap(np.arange(4.0).reshape(2, 2), 0, "")
    for tau in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ConfigError):
            binarize(m, tau)


def test_align_mask_block_upsampling():
    mask = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8), False)
    up = align_mask(mask, 4, 4)
    assert up.values.tolist() == [
        [1, 1, 0, 0],
        [1, 1, 0, 0],
        [0, 0, 1, 1],
        [0, 0, 1, 1],
    ]


def test_align_mask_identity_copies():
    mask = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8), False)
    out = align_mask(mask, 2, 2)
    assert np.array_equal(out.values, mask.values)
    assert out.values is not mask.values


def test_align_mask_rejects_non_integral_scale():
    mask = BinaryMask(np.ones((3, 3), dtype=np.uint8), False)
    with pytest.raises(ConfigError):
        align_mask(mask, 8, 8)
