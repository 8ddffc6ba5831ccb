"""Disparity rescaling, disparity-guided warping and feature similarity.

The warp and the similarity are written in torch so gradients reach the
feature values; disparities are treated as constants.  Disparity rescaling
never needs a gradient and runs through :mod:`lrdstereo.kernels`.
"""

import math

import numpy as np
import torch

from . import kernels
from .errors import DegenerateInputError, InvalidInputError
from .types import DisparityMap, FeatureMap

NORM_FLOOR = 1e-8


def rescale_disparity(d, target_w, target_h):
    """Resample ``d`` onto a ``target_h x target_w`` grid and rescale its values.

    Values are bilinearly sampled at ``(v*H/target_h, u*W/target_w)`` and
    multiplied by ``target_w / W`` so they stay in pixels of the new grid.
    """
    if d.values.size == 0:
        raise InvalidInputError("cannot rescale an empty disparity map")
    if target_w < 1 or target_h < 1:
        raise InvalidInputError(f"target size must be positive, got {target_w}x{target_h}")
    if (target_h, target_w) == d.shape:
        return DisparityMap(d.values.copy(), d.valid.copy())
    values, valid = kernels.resample_bilinear(d.values, d.valid, int(target_h), int(target_w))
    return DisparityMap(values * (target_w / d.width), valid)


def _disparity_tensors(d, like):
    if isinstance(d, DisparityMap):
        values, valid = d.tensors(dtype=like.dtype)
    else:
        values, valid = d
    values = values.to(dtype=like.dtype, device=like.device)
    valid = valid.to(device=like.device, dtype=torch.bool)
    return values, valid


def warp_right_to_left(f_r, d, warp_sign=-1):
    """Resample the right feature along rows at ``u + warp_sign * d(u, v)``.

    ``f_r`` is a ``(..., C, H, W)`` tensor or a :class:`FeatureMap`; ``d`` is a
    :class:`DisparityMap` or a ``(values, valid)`` tensor pair broadcastable to
    ``(..., H, W)``, already at the feature resolution.

    Returns the warped feature (same kind as ``f_r``) and a boolean mask that
    is True where the sample stayed inside the row and ``d`` was valid.
    Masked-out entries are zero.
    """
    if warp_sign not in (-1, 1):
        raise InvalidInputError(f"warp_sign must be -1 or +1, got {warp_sign}")
    wrap = isinstance(f_r, FeatureMap)
    feats = f_r.values if wrap else f_r
    values, valid = _disparity_tensors(d, feats)
    if values.shape[-2:] != feats.shape[-2:]:
        raise InvalidInputError(
            f"disparity grid {tuple(values.shape[-2:])} does not match feature grid {tuple(feats.shape[-2:])}"
        )
    width = feats.shape[-1]
    cols = torch.arange(width, dtype=feats.dtype, device=feats.device)
    x = cols + warp_sign * values
    x0 = torch.floor(x)
    frac = x - x0
    last = x0 + (frac > 0).to(x0.dtype)
    ok = valid & (x0 >= 0) & (last <= width - 1)

    lead = feats.shape[:-3]
    channels = feats.shape[-3]
    idx0 = x0.clamp(0, width - 1).long()
    idx1 = (x0 + 1).clamp(0, width - 1).long()
    idx0 = idx0.expand(*lead, *idx0.shape[-2:]).unsqueeze(-3).expand(*lead, channels, *idx0.shape[-2:])
    idx1 = idx1.expand(*lead, *idx1.shape[-2:]).unsqueeze(-3).expand(*lead, channels, *idx1.shape[-2:])
    near = torch.gather(feats, -1, idx0)
    far = torch.gather(feats, -1, idx1)
    frac = frac.unsqueeze(-3)
    out = (1.0 - frac) * near + frac * far
    ok = ok.expand(*lead, *ok.shape[-2:])
    out = torch.where(ok.unsqueeze(-3), out, torch.zeros((), dtype=out.dtype, device=out.device))
    if wrap:
        return FeatureMap(out, f_r.layer_name, f_r.channels), ok
    return out, ok


def cosine_map(f_a, f_b, eta=NORM_FLOOR):
    """Per-location cosine between channel vectors of two ``(..., C, H, W)`` tensors."""
    na = torch.linalg.vector_norm(f_a, dim=-3).clamp_min(eta)
    nb = torch.linalg.vector_norm(f_b, dim=-3).clamp_min(eta)
    return (f_a * f_b).sum(dim=-3) / (na * nb)


def cosine_dissimilarity(f_a, f_b, mask, eta=NORM_FLOOR):
    """One minus the mean masked per-location cosine similarity, in [0, 2]."""
    a = f_a.values if isinstance(f_a, FeatureMap) else f_a
    b = f_b.values if isinstance(f_b, FeatureMap) else f_b
    if a.shape != b.shape:
        raise InvalidInputError(f"feature shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    mask = torch.as_tensor(mask, device=a.device).to(torch.bool)
    grid = a.shape[:-3] + a.shape[-2:]
    if mask.shape != grid:
        try:
            mask = mask.expand(grid)
        except RuntimeError:
            raise InvalidInputError(f"mask {tuple(mask.shape)} does not cover feature grid {tuple(grid)}") from None
    count = int(mask.sum())
    if count == 0:
        raise DegenerateInputError("similarity mask selects no location")
    cos = cosine_map(a, b, eta)
    return 1.0 - cos[mask].sum() / count


def subset_indices(n_channels, fraction, seed):
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"channel fraction must lie in (0, 1], got {fraction}")
    keep = max(1, math.ceil(fraction * n_channels - 1e-12))
    if keep >= n_channels:
        return tuple(range(n_channels))
    rng = np.random.default_rng(seed)
    return tuple(int(i) for i in np.sort(rng.choice(n_channels, size=keep, replace=False)))


def channel_subset(f, fraction, seed):
    """Keep a seeded uniform random ``ceil(fraction * C)`` channels of ``f``.

    The kept indices are sorted and recorded on the returned map, both in
    ``channels`` and appended to ``layer_name``.
    """
    idx = subset_indices(f.values.shape[0], fraction, seed)
    if len(idx) == f.values.shape[0]:
        return FeatureMap(f.values, f.layer_name, f.channels)
    source = f.channels or tuple(range(f.values.shape[0]))
    kept = tuple(source[i] for i in idx)
    name = f"{f.layer_name}[ch={','.join(map(str, kept))}]"
    return FeatureMap(f.values[list(idx)], name, kept)
