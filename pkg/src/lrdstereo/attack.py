"""FGSM / I-FGSM drivers for white-box and proxy black-box attacks."""

import copy
import dataclasses
import hashlib
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import BudgetViolation, ConfigurationError, LRDError, NumericalError
from .losses import LossConfig, attack_objective, reference_disparity
from .metrics import compute_metrics, increase_pct, similarity_profile
from .models import predict
from .types import StereoSample

log = logging.getLogger(__name__)

MODES = ("whitebox", "blackbox_proxy")


@dataclass
class AttackConfig:
    """One attack run.  ``step_size=None`` means ``epsilon`` for one step, else ``epsilon/5``."""

    epsilon: float = 0.02
    steps: int = 10
    step_size: Optional[float] = None
    mode: str = "whitebox"
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    perturb_both: bool = True

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError(f"steps must be a positive integer, got {self.steps}")
        self.steps = int(self.steps)
        if self.step_size is None:
            self.step_size = self.epsilon if self.steps == 1 else self.epsilon / 5.0
        if not self.step_size > 0:
            raise ConfigurationError(f"step_size must be positive, got {self.step_size}")
        if self.steps == 1 and self.step_size != self.epsilon:
            raise ConfigurationError("a one-step attack must use step_size == epsilon")
        if self.mode == "blackbox_proxy" and self.loss.loss_kind != "proxy":
            raise ConfigurationError("blackbox_proxy mode needs loss_kind='proxy'")
        if self.mode == "whitebox" and self.loss.loss_kind == "proxy":
            raise ConfigurationError("loss_kind='proxy' is only valid in blackbox_proxy mode")

    @property
    def algorithm(self):
        return "one-shot" if self.steps == 1 else "iterative"

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)

    def with_overrides(self, **dotted):
        """Copy with fields replaced; ``loss.<name>`` keys reach the loss config.

        Overriding ``epsilon`` or ``steps`` without ``step_size`` re-derives the
        default step size.
        """
        doc = self.to_dict()
        if ("epsilon" in dotted or "steps" in dotted) and "step_size" not in dotted:
            doc["step_size"] = None
        for key, value in dotted.items():
            target = doc
            *parents, leaf = key.split(".")
            for p in parents:
                target = target[p]
            if leaf not in target:
                raise ConfigurationError(f"unknown config field {key!r}")
            target[leaf] = value
        return AttackConfig.from_dict(doc)

    def config_hash(self, exclude=()):
        doc = self.to_dict()
        for key in exclude:
            doc.pop(key, None)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class AttackResult:
    sample_id: str
    config_echo: AttackConfig
    delta_left: np.ndarray
    delta_right: np.ndarray
    clean_prediction: object
    perturbed_prediction: object
    loss_trajectory: list
    metrics_clean: object
    metrics_attacked: object
    similarity_clean: object = None
    similarity_attacked: object = None
    reference_source: str = "ground_truth"
    victim_queries_during_optimization: int = 0

    @property
    def mae_inc_pct(self):
        return increase_pct(self.metrics_clean.mae, self.metrics_attacked.mae)

    def perturbed_sample(self, sample):
        return StereoSample(
            np.clip(sample.left + self.delta_left, 0.0, 1.0),
            np.clip(sample.right + self.delta_right, 0.0, 1.0),
            sample.gt_disparity,
            sample.sample_id + "+adv",
        )

    def row(self):
        cfg = self.config_echo
        mc, ma = self.metrics_clean, self.metrics_attacked
        row = {
            "sample_id": self.sample_id,
            "mode": cfg.mode,
            "loss_kind": cfg.loss.loss_kind,
            "tapped_layer": cfg.loss.tapped_layer,
            "algorithm": cfg.algorithm,
            "epsilon": cfg.epsilon,
            "steps": cfg.steps,
            "step_size": cfg.step_size,
            "lambda_mix": cfg.loss.lambda_mix,
            "channel_fraction": cfg.loss.channel_fraction,
            "seed": cfg.seed,
            "reference_source": self.reference_source,
            "clean_mae": mc.mae,
            "clean_rmse": mc.rmse,
            "clean_d1": mc.d1_error,
            "attacked_mae": ma.mae,
            "attacked_rmse": ma.rmse,
            "attacked_d1": ma.d1_error,
            "mae_inc_pct": increase_pct(mc.mae, ma.mae),
            "rmse_inc_pct": increase_pct(mc.rmse, ma.rmse),
            "d1_inc_pct": increase_pct(mc.d1_error, ma.d1_error),
            "final_loss": self.loss_trajectory[-1],
            "victim_queries_during_optimization": self.victim_queries_during_optimization,
        }
        if self.similarity_clean is not None and self.similarity_attacked is not None:
            row["sim_clean_mean"] = self.similarity_clean.mean
            row["sim_attacked_mean"] = self.similarity_attacked.mean
            row["sim_drop_pct"] = self.similarity_attacked.drop_rate(self.similarity_clean)
        return row


def _project(delta, image, epsilon):
    delta = delta.clamp(-epsilon, epsilon)
    return torch.minimum(torch.maximum(delta, -image), 1.0 - image)


def fgsm_step(images, grads, step_size, epsilon, deltas, iteration=0):
    """Ascend one signed-gradient step and project back into the feasible set.

    Each of ``images``, ``grads`` and ``deltas`` is a ``(left, right)`` pair of
    tensors; a ``None`` gradient leaves that side's delta untouched.  Order:
    sign step, clip to ``[-epsilon, epsilon]``, clip so ``image + delta``
    stays in [0, 1].
    """
    out = []
    for side, image, grad, delta in zip(("left", "right"), images, grads, deltas):
        if grad is None:
            out.append(delta)
            continue
        if not bool(torch.isfinite(grad).all()):
            raise NumericalError(f"non-finite {side} gradient at iteration {iteration}")
        stepped = delta + step_size * torch.sign(grad.to(delta.dtype))
        out.append(_project(stepped, image, epsilon))
    return tuple(out)


def _check_budget(deltas, images, epsilon):
    for delta, image in zip(deltas, images):
        if float(delta.abs().max()) > epsilon:
            raise BudgetViolation(f"perturbation {float(delta.abs().max()):.3g} exceeds epsilon {epsilon:.3g}")
        adv = image + delta
        if float(adv.min()) < 0.0 or float(adv.max()) > 1.0 + 1e-12:
            raise BudgetViolation("perturbed image left [0, 1]")


def _model_dtype(model):
    return next(model.parameters()).dtype


def _optimise(model, sample, d_ref, cfg):
    """Shared I-FGSM loop: returns float64 ``(delta_left, delta_right)`` and the loss trajectory."""
    dtype = _model_dtype(model)
    base = tuple(t.double() for t in sample.tensors(dtype=torch.float64))
    deltas = tuple(torch.zeros_like(t) for t in base)
    trajectory = []
    for it in range(cfg.steps):
        adv = [(b + d).clamp(0.0, 1.0).to(dtype).requires_grad_(True) for b, d in zip(base, deltas)]
        loss = attack_objective(model, adv[0], adv[1], d_ref, cfg.loss)
        if not torch.isfinite(loss):
            raise NumericalError(f"attack objective became non-finite at iteration {it}")
        wanted = adv if cfg.perturb_both else adv[1:]
        grads = torch.autograd.grad(loss, wanted)
        if not cfg.perturb_both:
            grads = (None, grads[0])
        trajectory.append(float(loss.detach()))
        deltas = fgsm_step(base, grads, cfg.step_size, cfg.epsilon, deltas, iteration=it)
    _check_budget(deltas, base, cfg.epsilon)
    to_hwc = [d[0].permute(1, 2, 0).numpy().copy() for d in deltas]
    return to_hwc[0], to_hwc[1], trajectory


def _evaluate(victim, sample, d_ref, ref_source, delta_l, delta_r, cfg, trajectory, profile, clean_pred=None):
    clean_pred = clean_pred if clean_pred is not None else predict(victim, sample)
    adv_sample = StereoSample(
        np.clip(sample.left + delta_l, 0.0, 1.0),
        np.clip(sample.right + delta_r, 0.0, 1.0),
        sample.gt_disparity,
        sample.sample_id + "+adv",
    )
    adv_pred = predict(victim, adv_sample)
    truth = sample.gt_disparity if sample.gt_disparity is not None else d_ref
    sim_clean = sim_adv = None
    if profile:
        sign = cfg.loss.warp_sign
        sim_clean = similarity_profile(victim, sample, d_ref, sign)
        sim_adv = similarity_profile(victim, adv_sample, d_ref, sign)
    return AttackResult(
        sample_id=sample.sample_id,
        config_echo=cfg,
        delta_left=delta_l,
        delta_right=delta_r,
        clean_prediction=clean_pred,
        perturbed_prediction=adv_pred,
        loss_trajectory=trajectory,
        metrics_clean=compute_metrics(clean_pred, truth),
        metrics_attacked=compute_metrics(adv_pred, truth),
        similarity_clean=sim_clean,
        similarity_attacked=sim_adv,
        reference_source=ref_source,
    )


def run_whitebox(victim, sample, cfg, profile=True):
    """Maximise ``cfg.loss`` through the victim's own gradients."""
    if cfg.mode != "whitebox":
        raise ConfigurationError(f"run_whitebox needs mode='whitebox', got {cfg.mode!r}")
    torch.manual_seed(cfg.seed)
    d_ref, source = reference_disparity(sample, victim)
    clean_pred = predict(victim, sample)
    delta_l, delta_r, trajectory = _optimise(victim, sample, d_ref, cfg)
    return _evaluate(victim, sample, d_ref, source, delta_l, delta_r, cfg, trajectory, profile, clean_pred)


class QueryCounter:
    """Counts calls into a wrapped model; attribute access passes through."""

    def __init__(self, model):
        self._model = model
        self.calls = 0

    def __call__(self, *args, **kwargs):
        self.calls += 1
        return self._model(*args, **kwargs)

    def __getattr__(self, name):
        return getattr(self._model, name)


def craft_proxy_perturbation(proxy, sample, cfg):
    """Black-box noise from proxy features only; returns ``(delta_l, delta_r, trajectory)``."""
    if cfg.mode != "blackbox_proxy":
        raise ConfigurationError(f"proxy crafting needs mode='blackbox_proxy', got {cfg.mode!r}")
    if sample.gt_disparity is None:
        raise ConfigurationError("ground truth required: the black-box attack has no victim prediction to fall back on")
    torch.manual_seed(cfg.seed)
    return _optimise(proxy, sample, sample.gt_disparity, cfg)


def run_blackbox_proxy(proxy, victim_for_eval_only, sample, cfg, profile=True):
    """Craft noise on ``proxy``; consult the victim only once the noise is final."""
    counter = QueryCounter(victim_for_eval_only)
    delta_l, delta_r, trajectory = craft_proxy_perturbation(proxy, sample, cfg)
    during = counter.calls
    result = _evaluate(
        victim_for_eval_only, sample, sample.gt_disparity, "ground_truth", delta_l, delta_r, cfg, trajectory, profile
    )
    result.victim_queries_during_optimization = during
    return result


def run_attack(victim, sample, cfg, proxy=None, profile=True):
    if cfg.mode == "whitebox":
        return run_whitebox(victim, sample, cfg, profile)
    if proxy is None:
        raise ConfigurationError("blackbox_proxy mode needs a proxy network")
    return run_blackbox_proxy(proxy, victim, sample, cfg, profile)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepCell:
    config_index: int
    sample_index: int
    sample_id: str
    config: AttackConfig
    result: Optional[AttackResult] = None
    error: Optional[str] = None
    coords: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.error is None

    def row(self):
        base = {"cell": f"c{self.config_index}-s{self.sample_index}", "sample_id": self.sample_id, **self.coords}
        if self.result is not None:
            return {**base, **self.result.row()}
        cfg = self.config
        return {
            **base,
            "mode": cfg.mode,
            "loss_kind": cfg.loss.loss_kind,
            "tapped_layer": cfg.loss.tapped_layer,
            "algorithm": cfg.algorithm,
            "epsilon": cfg.epsilon,
            "steps": cfg.steps,
            "seed": cfg.seed,
            "error": self.error,
        }


def grid(base, **axes):
    """Cartesian product of override values over ``base``.

    Keyword names use ``__`` for nesting (``loss__tapped_layer=["F1", "F2"]``).
    Returns ``[(coords, AttackConfig)]`` where ``base.with_overrides(**coords)``
    reproduces each config.
    """
    keys = [k.replace("__", ".") for k in axes]
    cells = []
    for values in itertools.product(*axes.values()):
        coords = dict(zip(keys, values))
        cells.append((coords, base.with_overrides(**coords)))
    return cells


def sweep(configs, samples, victim, proxy=None, zipped=False, sink=None, workers=1, profile=True):
    """Run every (config, sample) cell; failures are recorded, never raised.

    ``configs`` holds ``AttackConfig`` objects or ``(coords, AttackConfig)``
    pairs from :func:`grid`.  ``zipped`` pairs configs and samples
    positionally instead of taking the product.  ``sink`` is called with each
    finished :class:`SweepCell` from the calling thread.  With ``workers > 1``
    each worker thread gets its own deep copy of the models.
    """
    norm = [c if isinstance(c, tuple) else ({}, c) for c in configs]
    if zipped:
        if len(norm) != len(samples):
            raise ConfigurationError("zipped sweep needs as many configs as samples")
        jobs = [(i, i) for i in range(len(norm))]
    else:
        jobs = [(ci, si) for ci in range(len(norm)) for si in range(len(samples))]

    def run(job, models):
        ci, si = job
        coords, cfg = norm[ci]
        sample = samples[si]
        cell = SweepCell(ci, si, sample.sample_id, cfg, coords=dict(coords))
        try:
            cell.result = run_attack(models[0], sample, cfg, models[1], profile)
        except (LRDError, ValueError, RuntimeError, ArithmeticError) as exc:
            log.warning("sweep cell c%d-s%d failed: %s", ci, si, exc)
            cell.error = f"{type(exc).__name__}: {exc}"
        return cell

    cells = []
    if workers <= 1:
        for job in jobs:
            cell = run(job, (victim, proxy))
            cells.append(cell)
            if sink is not None:
                sink(cell)
    else:
        chunks = [jobs[i::workers] for i in range(workers)]

        def worker(chunk):
            models = (copy.deepcopy(victim), copy.deepcopy(proxy))
            return [run(job, models) for job in chunk]

        with ThreadPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(worker, chunks):
                for cell in batch:
                    cells.append(cell)
                    if sink is not None:
                        sink(cell)
    cells.sort(key=lambda c: (c.config_index, c.sample_index))
    return cells
