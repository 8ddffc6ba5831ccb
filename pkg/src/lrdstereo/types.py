"""Plain data carriers passed between modules."""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch

from .errors import InvalidInputError


@dataclass(frozen=True)
class DisparityMap:
    """Horizontal displacement in pixels, measured at this map's own width."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise InvalidInputError(
                f"disparity values {values.shape} and mask {valid.shape} must be equal 2-D shapes"
            )
        valid = valid & np.isfinite(values)
        if np.any(values[valid] < 0):
            raise InvalidInputError("valid disparities must be non-negative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def dense(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isfinite(values))

    @property
    def shape(self):
        return self.values.shape

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def tensors(self, dtype=torch.float64):
        """``(values, valid)`` as torch tensors; invalid values are zeroed."""
        values = np.where(self.valid, self.values, 0.0)
        return torch.as_tensor(values, dtype=dtype), torch.as_tensor(self.valid)


@dataclass
class FeatureMap:
    """One tapped activation, laid out channels-first as ``(C, H, W)``.

    ``channels`` records which source channels survived a
    :func:`~lrdstereo.core_ops.channel_subset` call (``None`` = all).
    """

    values: torch.Tensor
    layer_name: str
    channels: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise InvalidInputError(f"feature map must be a non-empty (C, H, W) grid, got {tuple(self.values.shape)}")

    @property
    def shape(self):
        return tuple(self.values.shape)


@dataclass
class StereoSample:
    """Rectified pair of ``H x W x 3`` images in [0, 1]."""

    left: np.ndarray
    right: np.ndarray
    gt_disparity: Optional[DisparityMap] = None
    sample_id: str = "sample"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64)
        self.right = np.asarray(self.right, dtype=np.float64)
        if self.left.shape != self.right.shape or self.left.ndim != 3 or self.left.shape[2] != 3:
            raise InvalidInputError(
                f"left {self.left.shape} and right {self.right.shape} must both be H x W x 3"
            )
        for name, img in (("left", self.left), ("right", self.right)):
            if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
                raise InvalidInputError(f"{name} image values must lie in [0, 1]")
        if self.gt_disparity is not None and self.gt_disparity.shape != self.left.shape[:2]:
            raise InvalidInputError("ground-truth disparity must match the image grid")

    @property
    def shape(self):
        return self.left.shape[:2]

    def tensors(self, dtype=torch.float32):
        """Left and right images as ``(1, 3, H, W)`` tensors."""
        def conv(img):
            return torch.as_tensor(np.ascontiguousarray(img.transpose(2, 0, 1)), dtype=dtype)[None]
        return conv(self.left), conv(self.right)
