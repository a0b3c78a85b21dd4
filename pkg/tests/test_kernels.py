import numpy as np

from stagediff import kernels


def test_backend_switching():
    prev = kernels.use_numba(False)
    try:
        assert not kernels.using_numba()
        if kernels.HAVE_NUMBA:
            kernels.use_numba(True)
            assert kernels.using_numba()
    finally:
        kernels.use_numba(prev)


def test_masked_blend_backends_bitwise_identical(numba_backend):
    rng = np.random.default_rng(0)
    z_prev = rng.normal(size=(16, 16, 3))
    z_hat = rng.normal(size=(16, 16, 3))
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    nb = kernels.masked_blend(z_prev, z_hat, mask)
    np_ = kernels.masked_blend_np(z_prev, z_hat, mask)
    assert np.array_equal(nb, np_)


def test_minmax_binarize_backends_bitwise_identical(numba_backend):
    rng = np.random.default_rng(1)
    m = rng.random((16, 16))
    nb_mask, nb_flag = kernels.minmax_binarize(m, 0.5)
    np_mask, np_flag = kernels.minmax_binarize_np(m, 0.5)
    assert np.array_equal(nb_mask, np_mask)
    assert nb_flag == np_flag
    nb_mask, nb_flag = kernels.minmax_binarize(np.full((4, 4), 2.0), 0.5)
    assert nb_flag and not nb_mask.any()


def test_block_upsample_backends_bitwise_identical(numba_backend):
    rng = np.random.default_rng(2)
    m = (rng.random((8, 8)) > 0.5).astype(np.uint8)
    assert np.array_equal(
        kernels.block_upsample(m, 2, 3), kernels.block_upsample_np(m, 2, 3)
    )


def test_warmup_is_safe_on_both_backends():
    prev = kernels.use_numba(False)
    try:
        kernels.warmup()
        if kernels.HAVE_NUMBA:
            kernels.use_numba(True)
            kernels.warmup()
    finally:
        kernels.use_numba(prev)
