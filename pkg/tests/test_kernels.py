import numpy as np
import pytest

from lrdstereo import kernels
from lrdstereo._accel import get_backend, set_backend, use_backend

import oracles


def test_backend_switch_restores():
    before = get_backend()
    with use_backend("numpy"):
        assert get_backend() == "numpy"
    assert get_backend() == before


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        set_backend("fortran")


@pytest.mark.parametrize("shape,target", [((9, 13), (5, 7)), ((6, 8), (12, 16)), ((7, 7), (7, 3))])
def test_resample_matches_oracle(backend, rng, shape, target):
    values = rng.random(shape) * 10
    valid = rng.random(shape) > 0.15
    out, ok = kernels.resample_bilinear(values, valid, *target)
    ref, ref_ok = oracles.rescale(values, valid, target[1], target[0])
    ref = ref * shape[1] / target[1]  # oracle includes the width factor
    np.testing.assert_array_equal(ok, ref_ok)
    np.testing.assert_allclose(out[ok], ref[ok], atol=1e-12)
    assert np.all(out[~ok] == 0)


@pytest.mark.parametrize("sign", [-1, 1])
def test_warp_rows_matches_oracle(backend, rng, sign):
    src = rng.random((7, 12, 3))
    disp = rng.random((7, 12)) * 4
    disp[2, 5] = 2.0  # integer sample
    out, ok = kernels.warp_rows(src, disp, sign)
    ref, ref_ok = oracles.warp(src.transpose(2, 0, 1), disp, np.ones_like(disp, bool), sign)
    np.testing.assert_array_equal(ok, ref_ok)
    np.testing.assert_allclose(out, ref.transpose(1, 2, 0), atol=1e-12)


def test_occlusion_mask_flags_hidden_background(backend):
    # near box (d=4) over a far plane (d=1): box columns 8..11 land on 4..7 in
    # the right image, covering where background columns 5..7 would match.
    disp = np.ones((1, 20))
    disp[0, 8:12] = 4.0
    occ = kernels.occlusion_mask(disp, -1, 0.5)
    np.testing.assert_array_equal(np.flatnonzero(occ[0]), [5, 6, 7])


def test_block_match_recovers_shift(backend, rng):
    right = rng.random((6, 30, 3))
    left = np.zeros_like(right)
    left[:, 3:] = right[:, :-3]
    disp = kernels.block_match(left, right, 6, 1, 1)
    assert np.all(disp[:, 5:] == 3)  # windows clear of the zero fill
    assert np.all(disp[:, 0] == 0)  # only d=0 fits inside the row


def test_backends_agree(rng):
    values = rng.random((11, 17))
    valid = rng.random((11, 17)) > 0.1
    src = rng.random((11, 17, 2))
    disp = rng.random((11, 17)) * 5
    calls = [
        (kernels.resample_bilinear, (values, valid, 6, 9)),
        (kernels.warp_rows, (src, disp, -1)),
        (kernels.occlusion_mask, (disp, -1, 0.5)),
        (kernels.block_match, (src, np.roll(src, -2, axis=1), 4, 1, 2)),
    ]
    for fn, args in calls:
        a = fn.loop_impl(*args)
        b = fn.numpy_impl(*args)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        for x, y in zip(a, b):
            assert x.dtype == y.dtype
            np.testing.assert_allclose(x, y, atol=1e-12)
