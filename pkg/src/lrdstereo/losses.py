"""Attack objectives, all differentiable with respect to the input images."""

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from . import core_ops
from .errors import ConfigurationError, DegenerateInputError, InvalidInputError
from .models import predict
from .types import DisparityMap

LOSS_KINDS = ("disparity_only", "warp_only", "joint", "proxy")


@dataclass
class LossConfig:
    loss_kind: str = "joint"
    lambda_mix: float = 1.0
    tapped_layer: str = "F1"
    channel_fraction: float = 1.0
    channel_seed: int = 0
    warp_sign: int = -1

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigurationError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if not self.lambda_mix >= 0:
            raise ConfigurationError(f"lambda_mix must be non-negative, got {self.lambda_mix}")
        if not 0.0 < self.channel_fraction <= 1.0:
            raise ConfigurationError(f"channel_fraction must lie in (0, 1], got {self.channel_fraction}")
        if self.warp_sign not in (-1, 1):
            raise ConfigurationError(f"warp_sign must be -1 or +1, got {self.warp_sign}")

    def to_dict(self):
        return asdict(self)


def _ref_tensors(ref, like):
    if isinstance(ref, DisparityMap):
        values, valid = ref.tensors(dtype=like.dtype)
    else:
        values, valid = ref
    return values.to(like.dtype), valid.to(torch.bool)


def disparity_loss(pred, ref):
    """Mean smooth-L1 (transition at 1 px) over pixels valid in ``ref``."""
    if isinstance(pred, DisparityMap):
        pred = torch.as_tensor(pred.values)
    values, valid = _ref_tensors(ref, pred)
    if pred.shape[-2:] != values.shape[-2:]:
        raise InvalidInputError(f"prediction {tuple(pred.shape)} and reference {tuple(values.shape)} differ")
    values = values.expand_as(pred)
    valid = valid.expand_as(pred)
    count = int(valid.sum())
    if count == 0:
        raise DegenerateInputError("reference disparity has no valid pixel")
    return F.smooth_l1_loss(pred[valid], values[valid], beta=1.0, reduction="sum") / count


def feature_warping_loss(f_l, f_r, d_ref, cfg):
    """Warp ``f_r`` by ``d_ref`` rescaled to the feature grid; return ``1 - mean cos``.

    ``f_l``/``f_r`` are ``(N, C, h, w)`` or ``(C, h, w)``.  The optional channel
    subset is drawn once and applied to both sides.
    """
    h, w = f_l.shape[-2:]
    if f_l.shape != f_r.shape:
        raise InvalidInputError(f"left/right features differ: {tuple(f_l.shape)} vs {tuple(f_r.shape)}")
    d_feat = core_ops.rescale_disparity(d_ref, w, h)
    warped, mask = core_ops.warp_right_to_left(f_r, d_feat, cfg.warp_sign)
    if cfg.channel_fraction < 1.0:
        idx = list(core_ops.subset_indices(f_l.shape[-3], cfg.channel_fraction, cfg.channel_seed))
        f_l = f_l[..., idx, :, :]
        warped = warped[..., idx, :, :]
    if not bool(mask.any()):
        raise DegenerateInputError("warp left no in-bounds location with valid disparity")
    return core_ops.cosine_dissimilarity(f_l, warped, mask)


def _tap(model, layer):
    if layer not in model.tap_names:
        raise ConfigurationError(f"unknown layer {layer!r}; model taps are {list(model.tap_names)}")
    return model.taps[layer]


def objective_terms(model, left, right, d_ref, cfg):
    """One forward pass of a stereo model; returns ``(pred, l_d, l_w)``.

    ``l_w`` is ``None`` for ``disparity_only``; ``l_d`` is ``None`` for
    ``warp_only``.
    """
    pred = model(left, right)
    l_d = None if cfg.loss_kind == "warp_only" else disparity_loss(pred, d_ref)
    l_w = None
    if cfg.loss_kind in ("warp_only", "joint"):
        f_l, f_r = _tap(model, cfg.tapped_layer)
        l_w = feature_warping_loss(f_l, f_r, d_ref, cfg)
    return pred, l_d, l_w


def warping_loss(model, left, right, d_ref, cfg):
    """Feature-discrepancy loss at ``cfg.tapped_layer`` of a stereo model."""
    model(left, right)
    f_l, f_r = _tap(model, cfg.tapped_layer)
    return feature_warping_loss(f_l, f_r, d_ref, cfg)


def joint_loss(model, left, right, d_ref, cfg):
    """``disparity_loss + lambda_mix * warping_loss`` from one shared forward pass."""
    if cfg.loss_kind != "joint":
        raise ConfigurationError(f"joint_loss needs loss_kind='joint', got {cfg.loss_kind!r}")
    _, l_d, l_w = objective_terms(model, left, right, d_ref, cfg)
    return l_d + cfg.lambda_mix * l_w


def proxy_loss(proxy, left, right, d_ref, cfg):
    """Warping loss computed purely on proxy features (no stereo model involved).

    Left and right images go through the proxy one after the other.
    """
    if cfg.tapped_layer not in proxy.tap_names:
        raise ConfigurationError(f"unknown layer {cfg.tapped_layer!r}; proxy taps are {list(proxy.tap_names)}")
    f_l = proxy.features(left)[cfg.tapped_layer]
    f_r = proxy.features(right)[cfg.tapped_layer]
    return feature_warping_loss(f_l, f_r, d_ref, cfg)


def attack_objective(model, left, right, d_ref, cfg):
    """Scalar to maximise for ``cfg.loss_kind``; ``model`` is the proxy for ``proxy``."""
    if cfg.loss_kind == "proxy":
        return proxy_loss(model, left, right, d_ref, cfg)
    _, l_d, l_w = objective_terms(model, left, right, d_ref, cfg)
    if cfg.loss_kind == "disparity_only":
        return l_d
    if cfg.loss_kind == "warp_only":
        return l_w
    return l_d + cfg.lambda_mix * l_w


def reference_disparity(sample, model=None):
    """Ground truth when the sample has it, else the model's clean prediction.

    Returns ``(DisparityMap, source)`` with source ``"ground_truth"`` or
    ``"clean_prediction"``.
    """
    if sample.gt_disparity is not None:
        return sample.gt_disparity, "ground_truth"
    if model is None:
        raise ConfigurationError("ground truth required: sample has no disparity and no model to predict one")
    return predict(model, sample), "clean_prediction"
