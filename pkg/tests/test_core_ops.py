import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from lrdstereo.errors import DegenerateInputError, InvalidInputError
from lrdstereo.core_ops import (
    channel_subset,
    cosine_dissimilarity,
    rescale_disparity,
    subset_indices,
    warp_right_to_left,
)
from lrdstereo.types import DisparityMap, FeatureMap

import oracles


def _t(a):
    return torch.as_tensor(a, dtype=torch.float64)


# ---------------------------------------------------------------- rescale


def test_rescale_constant_field_scales_value(backend):
    d = DisparityMap.dense(np.full((16, 32), 6.0))
    out = rescale_disparity(d, 8, 4)
    assert out.shape == (4, 8)
    np.testing.assert_allclose(out.values, 1.5)
    assert out.valid.all()


def test_rescale_same_size_is_copy():
    d = DisparityMap.dense(np.arange(12.0).reshape(3, 4))
    out = rescale_disparity(d, 4, 3)
    np.testing.assert_array_equal(out.values, d.values)


def test_rescale_matches_oracle(backend, rng):
    values = rng.random((12, 20)) * 8
    valid = rng.random((12, 20)) > 0.2
    out = rescale_disparity(DisparityMap(values, valid), 7, 5)
    ref, ref_ok = oracles.rescale(values, valid, 7, 5)
    np.testing.assert_array_equal(out.valid, ref_ok)
    np.testing.assert_allclose(out.values[out.valid], ref[ref_ok], atol=1e-12)


def test_rescale_invalid_pixel_taints_neighbours(backend):
    values = np.ones((4, 8))
    valid = np.ones((4, 8), bool)
    valid[1, 3] = False
    out = rescale_disparity(DisparityMap(values, valid), 16, 8)
    assert not out.valid.all()
    assert out.valid.sum() > 100


@pytest.mark.parametrize("w,h", [(0, 3), (3, 0)])
def test_rescale_rejects_empty_target(w, h):
    with pytest.raises(InvalidInputError):
        rescale_disparity(DisparityMap.dense(np.ones((3, 3))), w, h)


# ---------------------------------------------------------------- warp


def test_warp_zero_disparity_is_identity(rng):
    f = _t(rng.standard_normal((3, 5, 7)))
    valid = np.ones((5, 7), bool)
    valid[2, 2] = False
    out, mask = warp_right_to_left(f, DisparityMap(np.zeros((5, 7)), valid))
    np.testing.assert_array_equal(mask.numpy(), valid)
    assert torch.equal(out[:, mask], f[:, mask])


def test_warp_ramp_shift_table():
    ramp = _t(np.tile(np.arange(4.0), (4, 1)))[None]
    out, mask = warp_right_to_left(ramp, DisparityMap.dense(np.ones((4, 4))))
    assert not mask[:, 0].any()
    assert mask[:, 1:].all()
    np.testing.assert_array_equal(out[0, :, 1:].numpy(), ramp[0, :, :-1].numpy())
    assert (out[0, :, 0] == 0).all()


def test_warp_oracle_random_8x8(rng):
    f = rng.standard_normal((4, 8, 8))
    d = rng.random((8, 8)) * 3
    out, mask = warp_right_to_left(_t(f), DisparityMap.dense(d))
    ref, ref_mask = oracles.warp(f, d, np.ones((8, 8), bool))
    np.testing.assert_array_equal(mask.numpy(), ref_mask)
    np.testing.assert_allclose(out.numpy(), ref, atol=1e-6)


@pytest.mark.parametrize("sign", [-1, 1])
def test_warp_sign_flag(rng, sign):
    f = rng.standard_normal((2, 6, 10))
    d = rng.random((6, 10)) * 2
    out, mask = warp_right_to_left(_t(f), DisparityMap.dense(d), warp_sign=sign)
    ref, ref_mask = oracles.warp(f, d, np.ones((6, 10), bool), sign)
    np.testing.assert_array_equal(mask.numpy(), ref_mask)
    np.testing.assert_allclose(out.numpy(), ref, atol=1e-12)


def test_warp_featuremap_in_featuremap_out(rng):
    fm = FeatureMap(_t(rng.random((2, 4, 6))), "F2")
    out, _ = warp_right_to_left(fm, DisparityMap.dense(np.ones((4, 6))))
    assert isinstance(out, FeatureMap) and out.layer_name == "F2"


def test_warp_batched_tensor_pair(rng):
    f = _t(rng.random((2, 3, 4, 6)))
    values = torch.ones(4, 6, dtype=torch.float64)
    out, mask = warp_right_to_left(f, (values, torch.ones(4, 6, dtype=torch.bool)))
    assert out.shape == f.shape and mask.shape == (2, 4, 6)


def test_warp_shape_mismatch():
    with pytest.raises(InvalidInputError):
        warp_right_to_left(torch.zeros(1, 4, 6), DisparityMap.dense(np.zeros((4, 5))))


def test_warp_bad_sign():
    with pytest.raises(InvalidInputError):
        warp_right_to_left(torch.zeros(1, 4, 6), DisparityMap.dense(np.zeros((4, 6))), warp_sign=0)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 6), st.integers(2, 9), st.integers(0, 2**31 - 1)
)
def test_warp_is_convex_combination(c, h, w, seed):
    r = np.random.default_rng(seed)
    f = r.standard_normal((c, h, w))
    d = r.random((h, w)) * w
    out, mask = warp_right_to_left(_t(f), DisparityMap.dense(d))
    o = out.numpy()
    for k in range(c):
        sel = o[k][mask.numpy()]
        if sel.size:
            assert sel.min() >= f[k].min() - 1e-12
            assert sel.max() <= f[k].max() + 1e-12


def test_warp_gradient_finite_difference(rng):
    f = _t(rng.standard_normal((3, 5, 9))).requires_grad_(True)
    d = DisparityMap.dense(rng.random((5, 9)) * 3)
    weights = _t(rng.standard_normal((3, 5, 9)))

    def objective(x):
        out, _ = warp_right_to_left(x, d)
        return (out * weights).sum()

    (grad,) = torch.autograd.grad(objective(f), f)
    _fd_check(objective, f.detach(), grad, rng, 100, 1e-4)


def _fd_check(fn, x, grad, rng, n, tol, h=1e-3):
    flat = x.reshape(-1)
    for i in rng.choice(flat.numel(), size=min(n, flat.numel()), replace=False):
        plus, minus = flat.clone(), flat.clone()
        plus[i] += h
        minus[i] -= h
        fd = (fn(plus.view_as(x)) - fn(minus.view_as(x))).item() / (2 * h)
        an = grad.reshape(-1)[i].item()
        assert abs(an - fd) <= tol * max(abs(an), abs(fd), 1e-6), (i, an, fd)


# ---------------------------------------------------------------- cosine


def test_cosine_self_and_antipodal(rng):
    a = _t(rng.random((4, 5, 5)) + 0.1)
    full = torch.ones(5, 5, dtype=torch.bool)
    assert abs(cosine_dissimilarity(a, a, full).item()) < 1e-12
    assert abs(cosine_dissimilarity(a, -a, full).item() - 2.0) < 1e-12


def test_cosine_orthogonal_is_one():
    a = torch.zeros(2, 3, 3, dtype=torch.float64)
    b = torch.zeros_like(a)
    a[0] = 1.0
    b[1] = 2.0
    assert cosine_dissimilarity(a, b, torch.ones(3, 3, dtype=torch.bool)).item() == pytest.approx(1.0)


def test_cosine_matches_oracle(rng):
    a = rng.standard_normal((8, 6, 6))
    b = rng.standard_normal((8, 6, 6))
    mask = rng.random((6, 6)) > 0.4
    got = cosine_dissimilarity(_t(a), _t(b), torch.as_tensor(mask)).item()
    assert abs(got - oracles.cosine_dissimilarity(a, b, mask)) < 1e-7


def test_cosine_empty_mask():
    a = torch.ones(2, 3, 3)
    with pytest.raises(DegenerateInputError):
        cosine_dissimilarity(a, a, torch.zeros(3, 3, dtype=torch.bool))


def test_cosine_shape_mismatch():
    with pytest.raises(InvalidInputError):
        cosine_dissimilarity(torch.ones(2, 3, 3), torch.ones(3, 3, 3), torch.ones(3, 3, dtype=torch.bool))


def test_cosine_zero_vectors_stay_finite():
    a = torch.zeros(3, 2, 2, dtype=torch.float64, requires_grad=True)
    loss = cosine_dissimilarity(a, torch.ones(3, 2, 2, dtype=torch.float64), torch.ones(2, 2, dtype=torch.bool))
    (g,) = torch.autograd.grad(loss, a)
    assert loss.item() == pytest.approx(1.0)
    assert torch.isfinite(g).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 1e6))
def test_cosine_symmetric_and_scale_invariant(seed, scale):
    r = np.random.default_rng(seed)
    a = _t(r.standard_normal((5, 4, 4)))
    b = _t(r.standard_normal((5, 4, 4)))
    mask = torch.as_tensor(r.random((4, 4)) > 0.3)
    mask[0, 0] = True
    base = cosine_dissimilarity(a, b, mask).item()
    assert cosine_dissimilarity(b, a, mask).item() == pytest.approx(base, abs=1e-12)
    field = _t(r.random((4, 4)) + 0.5) * scale
    assert cosine_dissimilarity(a * field, b, mask).item() == pytest.approx(base, abs=1e-9)
    assert 0.0 <= base <= 2.0


def test_cosine_gradient_finite_difference(rng):
    a = _t(rng.standard_normal((4, 5, 5))).requires_grad_(True)
    b = _t(rng.standard_normal((4, 5, 5))).requires_grad_(True)
    mask = torch.as_tensor(rng.random((5, 5)) > 0.2)
    ga, gb = torch.autograd.grad(cosine_dissimilarity(a, b, mask), (a, b))
    _fd_check(lambda x: cosine_dissimilarity(x, b.detach(), mask), a.detach(), ga, rng, 100, 1e-4)
    _fd_check(lambda x: cosine_dissimilarity(a.detach(), x, mask), b.detach(), gb, rng, 100, 1e-4)


# ---------------------------------------------------------------- channel subset


def test_subset_full_keeps_order(rng):
    fm = FeatureMap(_t(rng.random((8, 2, 2))), "F1")
    out = channel_subset(fm, 1.0, 3)
    assert torch.equal(out.values, fm.values) and out.layer_name == "F1"


def test_subset_half_deterministic(rng):
    fm = FeatureMap(_t(rng.random((8, 2, 2))), "F1")
    a = channel_subset(fm, 0.5, 11)
    b = channel_subset(fm, 0.5, 11)
    assert len(a.channels) == 4 and a.channels == b.channels
    assert list(a.channels) == sorted(a.channels)
    assert a.layer_name == "F1[ch=" + ",".join(map(str, a.channels)) + "]"
    assert torch.equal(a.values, fm.values[list(a.channels)])


def test_subset_rounds_up():
    assert len(subset_indices(10, 0.25, 0)) == 3
    assert len(subset_indices(3, 0.01, 0)) == 1


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_subset_rejects_fraction(fraction):
    with pytest.raises(InvalidInputError):
        subset_indices(8, fraction, 0)


def test_subset_uniform_over_seeds():
    n = 1000
    counts = np.zeros(8)
    for seed in range(n):
        counts[list(subset_indices(8, 0.5, seed))] += 1
    sigma = math.sqrt(n * 0.25)
    assert np.all(np.abs(counts - n / 2) <= 4 * sigma), counts


def test_subset_of_subset_tracks_source_channels(rng):
    fm = FeatureMap(_t(rng.random((8, 2, 2))), "F1")
    first = channel_subset(fm, 0.5, 1)
    second = channel_subset(first, 0.5, 2)
    assert set(second.channels) <= set(first.channels)
    for pos, ch in enumerate(second.channels):
        assert torch.equal(second.values[pos], fm.values[ch])
