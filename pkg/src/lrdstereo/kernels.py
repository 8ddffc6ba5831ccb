"""Non-differentiable numeric kernels with numba and pure-numpy paths.

Every public kernel here is a :func:`~lrdstereo._accel.dispatch` pair.  Both
paths take and return float64/bool numpy arrays and agree to rounding; the
test-suite checks that on random inputs.
"""

import math

import numpy as np

from ._accel import dispatch, njit

# --------------------------------------------------------------------------
# bilinear resampling of a scalar field with validity propagation


@njit
def _resample_loop(values, valid, target_h, target_w):
    h, w = values.shape
    out = np.zeros((target_h, target_w))
    ok = np.zeros((target_h, target_w), dtype=np.bool_)
    for v in range(target_h):
        y = min(v * h / target_h, h - 1.0)
        y0 = int(math.floor(y))
        fy = y - y0
        y1 = min(y0 + 1, h - 1)
        for u in range(target_w):
            x = min(u * w / target_w, w - 1.0)
            x0 = int(math.floor(x))
            fx = x - x0
            x1 = min(x0 + 1, w - 1)
            acc = 0.0
            good = True
            for yy, wy in ((y0, 1.0 - fy), (y1, fy)):
                if wy == 0.0:
                    continue
                for xx, wx in ((x0, 1.0 - fx), (x1, fx)):
                    if wx == 0.0:
                        continue
                    if valid[yy, xx]:
                        acc += wy * wx * values[yy, xx]
                    else:
                        good = False
            ok[v, u] = good
            out[v, u] = acc if good else 0.0
    return out, ok


def _resample_numpy(values, valid, target_h, target_w):
    """Sample ``values`` at ``(v*H/target_h, u*W/target_w)`` bilinearly.

    Coordinates past the last sample clamp to it.  A target pixel is valid
    only if every source pixel that receives non-zero weight is valid.
    """
    h, w = values.shape
    y = np.minimum(np.arange(target_h) * h / target_h, h - 1.0)
    x = np.minimum(np.arange(target_w) * w / target_w, w - 1.0)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    clean = np.where(valid, values, 0.0)

    out = np.zeros((target_h, target_w))
    ok = np.ones((target_h, target_w), dtype=bool)
    for ys, wy in ((y0, 1.0 - fy), (y1, fy)):
        for xs, wx in ((x0, 1.0 - fx), (x1, fx)):
            weight = wy * wx
            used = weight != 0.0
            out += weight * clean[np.ix_(ys, xs)]
            ok &= ~used | valid[np.ix_(ys, xs)]
    out[~ok] = 0.0
    return out, ok


resample_bilinear = dispatch(_resample_loop, _resample_numpy)

# --------------------------------------------------------------------------
# horizontal warp of an H x W x C grid by a per-pixel displacement


@njit
def _warp_rows_loop(src, disp, sign):
    h, w, c = src.shape
    out = np.zeros((h, w, c))
    ok = np.zeros((h, w), dtype=np.bool_)
    for v in range(h):
        for u in range(w):
            d = disp[v, u]
            if not math.isfinite(d):
                continue
            x = u + sign * d
            x0 = int(math.floor(x))
            fx = x - x0
            last = x0 + 1 if fx > 0.0 else x0
            if x0 < 0 or last > w - 1:
                continue
            ok[v, u] = True
            for k in range(c):
                if fx > 0.0:
                    out[v, u, k] = (1.0 - fx) * src[v, x0, k] + fx * src[v, x0 + 1, k]
                else:
                    out[v, u, k] = src[v, x0, k]
    return out, ok


def _warp_rows_numpy(src, disp, sign):
    """Return ``out[v, u] = src[v, u + sign*disp[v, u]]`` sampled linearly.

    Pixels whose sample needs a column outside ``[0, W-1]`` (or whose
    displacement is not finite) are zero and flagged False.
    """
    h, w, c = src.shape
    finite = np.isfinite(disp)
    x = np.arange(w)[None, :] + sign * np.where(finite, disp, 0.0)
    x0 = np.floor(x).astype(np.int64)
    fx = x - x0
    last = x0 + (fx > 0.0)
    ok = finite & (x0 >= 0) & (last <= w - 1)
    a = np.clip(x0, 0, w - 1)
    b = np.clip(x0 + 1, 0, w - 1)
    rows = np.arange(h)[:, None]
    fx3 = fx[..., None]
    left = src[rows, a]
    right = src[rows, b]
    out = np.where(fx3 > 0.0, (1.0 - fx3) * left + fx3 * right, left)
    out[~ok] = 0.0
    return out, ok


warp_rows = dispatch(_warp_rows_loop, _warp_rows_numpy)

# --------------------------------------------------------------------------
# occlusion test by per-row z-buffer


@njit
def _occlusion_loop(disp, sign, tolerance):
    h, w = disp.shape
    occluded = np.zeros((h, w), dtype=np.bool_)
    zbuf = np.empty(w)
    for v in range(h):
        zbuf[:] = -np.inf
        for u in range(w):
            t = int(math.floor(u + sign * disp[v, u] + 0.5))
            if 0 <= t < w and disp[v, u] > zbuf[t]:
                zbuf[t] = disp[v, u]
        for u in range(w):
            t = int(math.floor(u + sign * disp[v, u] + 0.5))
            if 0 <= t < w and disp[v, u] + tolerance < zbuf[t]:
                occluded[v, u] = True
    return occluded


def _occlusion_numpy(disp, sign, tolerance):
    """Flag left pixels whose match is hidden behind a larger disparity.

    Each pixel projects to column ``round(u + sign*d)``; the per-row z-buffer
    keeps the largest disparity landing on every column.  A pixel is
    occluded when something at least ``tolerance`` px nearer claims its column.
    """
    h, w = disp.shape
    t = np.floor(np.arange(w)[None, :] + sign * disp + 0.5).astype(np.int64)
    inside = (t >= 0) & (t < w)
    flat = (np.arange(h)[:, None] * w + np.clip(t, 0, w - 1))
    zbuf = np.full(h * w, -np.inf)
    np.maximum.at(zbuf, flat[inside], disp[inside])
    return inside & (disp + tolerance < zbuf[flat])


occlusion_mask = dispatch(_occlusion_loop, _occlusion_numpy)

# --------------------------------------------------------------------------
# exhaustive SAD block matching (oracle for synthetic ground truth)


@njit
def _block_match_loop(left, right, max_disp, half_h, half_w):
    h, w, c = left.shape
    best = np.full((h, w), -1, dtype=np.int64)
    best_cost = np.full((h, w), np.inf)
    ad = np.empty((h, w))
    rows = np.empty((h, w))
    for d in range(max_disp + 1):
        for v in range(h):
            for u in range(w):
                if u < d:
                    ad[v, u] = np.inf
                else:
                    acc = 0.0
                    for k in range(c):
                        acc += abs(left[v, u, k] - right[v, u - d, k])
                    ad[v, u] = acc
        # separable clipped box sum; inf propagates, so no running subtraction
        for v in range(h):
            for u in range(w):
                acc = 0.0
                for uu in range(max(u - half_w, 0), min(u + half_w + 1, w)):
                    acc += ad[v, uu]
                rows[v, u] = acc
        for v in range(h):
            for u in range(w):
                acc = 0.0
                for vv in range(max(v - half_h, 0), min(v + half_h + 1, h)):
                    acc += rows[vv, u]
                if acc < best_cost[v, u]:
                    best_cost[v, u] = acc
                    best[v, u] = d
    return best


def _block_match_numpy(left, right, max_disp, half_h, half_w):
    """Integer disparity minimising the windowed sum of absolute differences.

    Windows are clipped at the image border.  A candidate whose window would
    read right-image columns left of 0 is rejected; pixels with no admissible
    candidate get -1.  Ties resolve to the smallest disparity.
    """
    h, w, c = left.shape
    costs = np.empty((max_disp + 1, h, w))
    for d in range(max_disp + 1):
        ad = np.full((h, w), np.inf)
        ad[:, d:] = np.abs(left[:, d:] - right[:, : w - d]).sum(axis=2)
        padded = np.pad(ad, ((half_h, half_h), (half_w, half_w)), constant_values=0.0)
        total = np.zeros((h, w))
        for dv in range(2 * half_h + 1):
            for du in range(2 * half_w + 1):
                total = total + padded[dv:dv + h, du:du + w]
        costs[d] = total
    best = np.argmin(costs, axis=0).astype(np.int64)
    best[~np.isfinite(costs.min(axis=0))] = -1
    return best


block_match = dispatch(_block_match_loop, _block_match_numpy)
