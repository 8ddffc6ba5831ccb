"""Error metrics, per-layer left-right similarity and disparity histograms."""

from dataclasses import dataclass, field

import numpy as np
import torch

from . import core_ops
from .errors import ConfigurationError, DegenerateInputError, InvalidInputError

D1_ABS_PX = 3.0
D1_REL = 0.05


@dataclass(frozen=True)
class MetricsRecord:
    mae: float
    rmse: float
    d1_error: float
    valid_pixel_count: int

    def to_dict(self):
        return {"mae": self.mae, "rmse": self.rmse, "d1_error": self.d1_error, "valid_pixel_count": self.valid_pixel_count}


def compute_metrics(pred, gt):
    """MAE, RMSE and D1 (|e| > 3 px and > 5 % of gt, in percent) over valid gt pixels."""
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = gt.valid & np.isfinite(pred.values)
    count = int(mask.sum())
    if count == 0:
        raise DegenerateInputError("no valid ground-truth pixel to evaluate")
    err = np.abs(pred.values[mask] - gt.values[mask])
    mae = float(err.mean())
    rmse = float(np.sqrt(np.mean(err**2)))
    bad = (err > D1_ABS_PX) & (err > D1_REL * gt.values[mask])
    # rounding can put rmse an ulp under mae when |e| is constant
    return MetricsRecord(mae, max(rmse, mae), 100.0 * float(bad.mean()), count)


def increase_pct(clean, attacked):
    """Percentage increase of ``attacked`` over ``clean`` (inf if clean is 0)."""
    if clean == 0:
        return 0.0 if attacked == 0 else float("inf")
    return 100.0 * (attacked - clean) / clean


@dataclass
class SimilarityProfile:
    layers: list = field(default_factory=list)  # [(layer_name, mean cosine)]

    @property
    def mean(self):
        return float(np.mean([s for _, s in self.layers]))

    def as_dict(self):
        return dict(self.layers)

    def drop_rate(self, reference):
        """Percent drop of this profile's mean relative to ``reference``'s mean."""
        return 100.0 * (reference.mean - self.mean) / reference.mean


def layer_similarity(f_l, f_r, d_ref, warp_sign=-1):
    """Mean masked cosine between ``f_l`` and ``f_r`` warped by rescaled ``d_ref``."""
    h, w = f_l.shape[-2:]
    d_feat = core_ops.rescale_disparity(d_ref, w, h)
    warped, mask = core_ops.warp_right_to_left(f_r, d_feat, warp_sign)
    return 1.0 - float(core_ops.cosine_dissimilarity(f_l, warped, mask))


def similarity_profile(model, sample, d_ref, warp_sign=-1, layers=None):
    """Forward ``sample`` through ``model`` and profile every weight-sharing tap."""
    names = [n for n in (layers or model.tap_names) if model.weight_sharing.get(n, False)]
    if not names:
        raise ConfigurationError("model exposes no weight-sharing tap to profile")
    dtype = next(model.parameters()).dtype
    left, right = sample.tensors(dtype=dtype)
    with torch.no_grad():
        model(left, right)
        taps = dict(model.taps)
    if not taps:
        raise ConfigurationError("forward pass left the tap registry empty")
    return SimilarityProfile([(n, layer_similarity(taps[n][0], taps[n][1], d_ref, warp_sign)) for n in names])


@dataclass
class DisparityHistogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def peak(self):
        """Left edge of the most populated bin (first one on ties)."""
        return float(self.edges[int(np.argmax(self.density))])


def disparity_histogram(maps, bins=1.0, value_range=(0.0, 192.0)):
    """Normalised histogram of valid disparities across ``maps``.

    ``bins`` is a bin width or an explicit edge array; values outside the
    range fall into the end bins so the densities always sum to one.
    """
    values = [m.values[m.valid] for m in maps]
    values = np.concatenate(values) if values else np.empty(0)
    if values.size == 0:
        raise DegenerateInputError("no valid disparity to histogram")
    if np.ndim(bins) == 0:
        lo, hi = value_range
        edges = np.arange(lo, hi + float(bins) * 0.5, float(bins))
        if edges[-1] < hi:
            edges = np.append(edges, hi)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    clipped = np.clip(values, edges[0], edges[-1])
    counts, _ = np.histogram(clipped, bins=edges)
    return DisparityHistogram(edges, counts / counts.sum())
