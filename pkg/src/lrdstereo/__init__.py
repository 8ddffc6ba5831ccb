"""Left-right feature-discrepancy adversarial attacks on stereo matching networks."""

__version__ = "0.1.0"

from .attack import AttackConfig, AttackResult, fgsm_step, grid, run_blackbox_proxy, run_whitebox, sweep
from .core_ops import channel_subset, cosine_dissimilarity, rescale_disparity, warp_right_to_left
from .dataio import DisparityField, generate_stereogram, load_kitti_png, load_pfm, write_report
from .losses import LossConfig, disparity_loss, joint_loss, proxy_loss, warping_loss
from .metrics import compute_metrics, disparity_histogram, similarity_profile
from .models import ProxyNet, ToyStereoNet, adapter_register, load_checkpoint, save_checkpoint, train_toy
from .types import DisparityMap, FeatureMap, StereoSample
