"""Bundled toy victim, proxy feature extractor and the external-model adapter.

A *stereo model* here is anything with

* ``forward(left, right) -> (N, H, W)`` disparity for ``(N, 3, H, W)`` inputs
  in [0, 1], values in ``[0, d_max]``;
* ``taps``: ``{layer_name: (left_feature, right_feature)}`` refreshed by every
  forward pass, each feature ``(N, C, h, w)``;
* ``tap_names``, ``d_max`` and ``weight_sharing`` (layer name -> bool).

A *feature extractor* (the proxy) only needs ``features(x) -> {name: tensor}``
and ``tap_names``.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ContractViolation, FormatError, InvalidInputError, TrainingError
from .types import DisparityMap


def _conv(cin, cout, stride=1, kernel=3):
    return nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2)


def _normalize(x):
    return (x - 0.5) / 0.25


def correlation_volume(feat_l, feat_r, d_max):
    """Dot product of left pixel ``u`` with right pixel ``u - d``.

    Candidates that fall off the right image's left edge score 0.
    """
    n, _, h, w = feat_l.shape
    slices = []
    for d in range(d_max + 1):
        if d == 0:
            slices.append((feat_l * feat_r).sum(dim=1))
            continue
        score = (feat_l[..., d:] * feat_r[..., :-d]).sum(dim=1)
        slices.append(F.pad(score, (d, 0)))
    return torch.stack(slices, dim=1)


class ToyStereoNet(nn.Module):
    """Siamese three-stage encoder, cosine correlation cost volume, soft-argmin head.

    Taps ``F1`` (full), ``F2`` (1/2) and ``F3`` (1/4 resolution) are the
    outputs of the encoder stages.  Both images go through the encoder as
    one concatenated batch, so left and right share weights bit-exactly.
    """

    tap_names = ("F1", "F2", "F3")

    def __init__(self, channels=(16, 32, 64), d_max=16, match_channels=32):
        super().__init__()
        c1, c2, c3 = channels
        self.config = {"channels": list(channels), "d_max": d_max, "match_channels": match_channels}
        self.d_max = d_max
        self.weight_sharing = {name: True for name in self.tap_names}
        self.stage1 = nn.Sequential(_conv(3, c1), nn.ELU(), _conv(c1, c1), nn.ELU())
        self.stage2 = nn.Sequential(_conv(c1, c2, stride=2), nn.ELU(), _conv(c2, c2), nn.ELU())
        self.stage3 = nn.Sequential(_conv(c2, c3, stride=2), nn.ELU(), _conv(c3, c3), nn.ELU())
        self.fuse = _conv(c1 + c2 + c3, match_channels, kernel=1)
        self.aggregate = nn.Sequential(_conv(d_max + 1, 32), nn.ELU(), _conv(32, d_max + 1))
        self.temperature = nn.Parameter(torch.tensor(10.0))
        self.taps = {}

    def min_input_width(self):
        return self.d_max + 8

    def encode(self, x):
        f1 = self.stage1(_normalize(x))
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        size = f1.shape[-2:]
        fused = torch.cat(
            [
                f1,
                F.interpolate(f2, size=size, mode="bilinear", align_corners=False),
                F.interpolate(f3, size=size, mode="bilinear", align_corners=False),
            ],
            dim=1,
        )
        return (f1, f2, f3), self.fuse(fused)

    def forward(self, left, right):
        if left.shape != right.shape or left.ndim != 4:
            raise InvalidInputError(f"left {tuple(left.shape)} and right {tuple(right.shape)} must match as (N, 3, H, W)")
        h, w = left.shape[-2:]
        if w < self.min_input_width() or h < 8:
            raise InvalidInputError(f"input {h}x{w} too small; need height >= 8 and width >= {self.min_input_width()}")
        n = left.shape[0]
        feats, match = self.encode(torch.cat([left, right], dim=0))
        self.taps = {name: (f[:n], f[n:]) for name, f in zip(self.tap_names, feats)}
        match = F.normalize(match, dim=1)
        corr = self.temperature * correlation_volume(match[:n], match[n:], self.d_max)
        cost = -(corr + self.aggregate(corr))
        prob = torch.softmax(-cost, dim=1)
        candidates = torch.arange(self.d_max + 1, dtype=prob.dtype, device=prob.device)
        return (prob * candidates[None, :, None, None]).sum(dim=1)


class ProxyNet(nn.Module):
    """Small four-stage convolutional classifier used as a black-box proxy.

    Stage outputs ``F1p``..``F4p`` sit at strides 1, 2, 4 and 8.
    """

    tap_names = ("F1p", "F2p", "F3p", "F4p")

    def __init__(self, channels=(16, 32, 64, 128), n_classes=4):
        super().__init__()
        self.config = {"channels": list(channels), "n_classes": n_classes}
        stages = []
        cin = 3
        for i, cout in enumerate(channels):
            stride = 1 if i == 0 else 2
            stages.append(nn.Sequential(_conv(cin, cout, stride=stride), nn.ELU(), _conv(cout, cout), nn.ELU()))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(cin, n_classes)

    def features(self, x):
        out = {}
        h = _normalize(x)
        for name, stage in zip(self.tap_names, self.stages):
            h = stage(h)
            out[name] = h
        return out

    def forward(self, x):
        last = self.features(x)[self.tap_names[-1]]
        return self.head(last.mean(dim=(-2, -1)))


def predict(model, sample):
    """Clean-image prediction as a fully valid :class:`DisparityMap`."""
    dtype = next(model.parameters()).dtype if isinstance(model, nn.Module) else torch.float32
    left, right = sample.tensors(dtype=dtype)
    with torch.no_grad():
        disp = model(left, right)[0]
    return DisparityMap.dense(disp.detach().double().numpy())


# --------------------------------------------------------------------------
# training


def smooth_l1_masked(pred, ref, valid):
    count = valid.sum()
    if int(count) == 0:
        raise InvalidInputError("no valid reference pixel")
    return F.smooth_l1_loss(pred[valid], ref[valid], beta=1.0, reduction="sum") / count


def _stack(samples, dtype=torch.float32):
    lefts, rights, gts, valids = [], [], [], []
    for s in samples:
        l, r = s.tensors(dtype)
        lefts.append(l)
        rights.append(r)
        g, v = s.gt_disparity.tensors(dtype)
        gts.append(g)
        valids.append(v)
    return torch.cat(lefts), torch.cat(rights), torch.stack(gts), torch.stack(valids)


@dataclass
class TrainResult:
    model: nn.Module
    epoch_loss: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)


def _seed_everything(seed):
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))


def train_toy(dataset, epochs=40, lr=2e-3, seed=0, batch_size=8, crop=None, model=None, progress=None):
    """Fit a :class:`ToyStereoNet` on stereograms with ground truth.

    ``crop=(h, w)`` trains on seeded random crops (one offset per batch).
    ``epoch_loss[0]`` is the full-size dataset loss before any update; entry
    ``k`` is the loss after epoch ``k``.  Same seed, same data -> identical
    weights.
    """
    if not dataset or any(s.gt_disparity is None for s in dataset):
        raise InvalidInputError("training needs a non-empty dataset with ground truth")
    _seed_everything(seed)
    model = model if model is not None else ToyStereoNet()
    left, right, gt, valid = _stack(dataset)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(epochs, 1))
    rng = np.random.default_rng(seed)
    result = TrainResult(model)

    def evaluate():
        with torch.no_grad():
            total = 0.0
            for start in range(0, len(dataset), 32):
                sl = slice(start, start + 32)
                pred = model(left[sl], right[sl])
                total += float(smooth_l1_masked(pred, gt[sl], valid[sl])) * len(left[sl])
        return total / len(dataset)

    result.epoch_loss.append(evaluate())
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            idx = torch.as_tensor(order[start:start + batch_size])
            rows, cols = slice(None), slice(None)
            if crop is not None:
                top = int(rng.integers(0, left.shape[-2] - crop[0] + 1))
                lft = int(rng.integers(0, left.shape[-1] - crop[1] + 1))
                rows, cols = slice(top, top + crop[0]), slice(lft, lft + crop[1])
            pred = model(left[idx][..., rows, cols], right[idx][..., rows, cols])
            loss = smooth_l1_masked(pred, gt[idx][..., rows, cols], valid[idx][..., rows, cols])
            if not torch.isfinite(loss):
                raise TrainingError(f"training loss became non-finite in epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), 5.0)
            opt.step()
            result.step_loss.append(float(loss.detach()))
        sched.step()
        result.epoch_loss.append(evaluate())
        if progress is not None:
            progress(epoch, result.epoch_loss[-1])
    return result


def texture_batch(rng, n, size=32):
    """Synthetic four-class texture images: fine dots, blobs, h-stripes, v-stripes."""
    labels = rng.integers(0, 4, size=n)
    images = np.empty((n, 3, size, size))
    grid = np.arange(size)
    for i, label in enumerate(labels):
        if label == 0:
            img = rng.random((3, size, size))
        elif label == 1:
            coarse = rng.random((3, size // 4, size // 4))
            img = np.repeat(np.repeat(coarse, 4, axis=1), 4, axis=2)
        else:
            freq = rng.uniform(0.15, 0.6)
            phase = rng.uniform(0, 2 * np.pi)
            wave = 0.5 + 0.5 * np.sin(freq * grid + phase)
            plane = np.broadcast_to(wave[:, None] if label == 2 else wave[None, :], (size, size))
            img = np.clip(plane[None] * rng.uniform(0.5, 1.0, (3, 1, 1)) + 0.1 * rng.standard_normal((3, size, size)), 0, 1)
        images[i] = img
    return torch.as_tensor(images, dtype=torch.float32), torch.as_tensor(labels)


def train_proxy(steps=300, lr=2e-3, seed=0, batch_size=32):
    """Briefly train :class:`ProxyNet` on :func:`texture_batch` classification."""
    _seed_everything(seed)
    model = ProxyNet()
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    for step in range(steps):
        x, y = texture_batch(rng, batch_size)
        loss = F.cross_entropy(model(x), y)
        if not torch.isfinite(loss):
            raise TrainingError(f"proxy training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    return TrainResult(model, step_loss=losses)


# --------------------------------------------------------------------------
# checkpoint file: magic, version, JSON header, little-endian payload

CHECKPOINT_MAGIC = b"LRDCKPT\0"
CHECKPOINT_VERSION = 1
_ARCHES = {"ToyStereoNet": ToyStereoNet, "ProxyNet": ProxyNet}


def config_hash(arch, config):
    blob = json.dumps({"arch": arch, "config": config}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(model, path, meta=None):
    """Write every parameter and buffer as little-endian float32."""
    arch = type(model).__name__
    if arch not in _ARCHES:
        raise ConfigurationError(f"cannot serialise architecture {arch!r}")
    entries, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        raw = tensor.detach().cpu().numpy().astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "dtype": "<f4", "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "arch": arch,
        "config": model.config,
        "config_hash": config_hash(arch, model.config),
        "meta": meta or {},
        "params": entries,
    }
    head = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)
    return path


def read_checkpoint_header(path):
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header at byte 8")
    version, head_len = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} at byte 8")
    try:
        header = json.loads(data[16:16 + head_len])
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable JSON header at byte 16") from exc
    return header, data[16 + head_len:]


def load_checkpoint(path):
    header, payload = read_checkpoint_header(path)
    cls = _ARCHES.get(header["arch"])
    if cls is None:
        raise FormatError(f"{path}: unknown architecture {header['arch']!r}")
    cfg = dict(header["config"])
    if "channels" in cfg:
        cfg["channels"] = tuple(cfg["channels"])
    model = cls(**cfg)
    state = {}
    for entry in header["params"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise FormatError(f"{path}: payload truncated inside {entry['name']!r}")
        arr = np.frombuffer(payload[entry["offset"]:end], dtype=entry["dtype"]).reshape(entry["shape"])
        state[entry["name"]] = torch.as_tensor(arr.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    model.checkpoint_meta = header.get("meta", {})
    return model


# --------------------------------------------------------------------------
# adapter for external stereo networks


class AdapterContractError(ContractViolation):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class AdapterDescription:
    """Declarative description of an external stereo network.

    ``predict`` names the method called as ``predict(left, right)``; ``taps``
    names the attribute holding ``{layer: (left, right)}`` after that call.
    """

    name: str
    layers: list
    d_max: float
    predict: str = "forward"
    taps: str = "taps"
    probe_shape: tuple = (32, 64)
    weight_sharing: dict = None

    @classmethod
    def from_dict(cls, doc):
        missing = {"name", "layers", "d_max"} - set(doc)
        if missing:
            raise ConfigurationError(f"adapter description missing fields: {sorted(missing)}")
        known = {k: doc[k] for k in ("name", "layers", "d_max", "predict", "taps", "probe_shape", "weight_sharing") if k in doc}
        known["probe_shape"] = tuple(known.get("probe_shape", (32, 64)))
        return cls(**known)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class AdaptedStereoModel(nn.Module):
    """Wraps an external network behind the stereo-model contract."""

    def __init__(self, inner, description):
        super().__init__()
        self.inner = inner
        self.description = description
        self.tap_names = tuple(description.layers)
        self.d_max = description.d_max
        sharing = description.weight_sharing or {}
        self.weight_sharing = {name: bool(sharing.get(name, True)) for name in self.tap_names}
        self.taps = {}

    def forward(self, left, right):
        disp = getattr(self.inner, self.description.predict)(left, right)
        if disp.ndim == 4 and disp.shape[1] == 1:
            disp = disp[:, 0]
        raw = getattr(self.inner, self.description.taps)
        self.taps = {name: raw[name] for name in self.tap_names if name in raw}
        return disp


def check_contract(model, probe_shape=(32, 64), seed=0, atol=1e-5):
    """Run the contract self-test; return a list of violation messages."""
    problems = []
    h, w = probe_shape
    gen = torch.Generator().manual_seed(seed)
    left = torch.rand(1, 3, h, w, generator=gen)
    right = torch.roll(left, shifts=-2, dims=-1)
    try:
        with torch.no_grad():
            disp = model(left, right)
    except Exception as exc:  # the external model is arbitrary code
        return [f"prediction call failed: {exc}"]
    if tuple(disp.shape) != (1, h, w):
        problems.append(f"prediction shape {tuple(disp.shape)} != (1, {h}, {w})")
    if not torch.isfinite(disp).all():
        problems.append("prediction contains non-finite values")
    elif disp.min() < -atol or disp.max() > model.d_max + atol:
        problems.append(
            f"prediction range [{float(disp.min()):.4g}, {float(disp.max()):.4g}] violates [0, d_max={model.d_max}]"
        )
    for name in model.tap_names:
        if name not in model.taps:
            problems.append(f"layer {name!r}: tap not populated by forward pass")
            continue
        fl, fr = model.taps[name]
        if fl.shape != fr.shape:
            problems.append(f"layer {name!r}: left tap {tuple(fl.shape)} != right tap {tuple(fr.shape)}")
    return problems


def adapter_register(description, inner):
    """Wrap ``inner`` per ``description`` and refuse it if the self-test fails."""
    if isinstance(description, dict):
        description = AdapterDescription.from_dict(description)
    for attr in (description.predict,):
        if not callable(getattr(inner, attr, None)):
            raise AdapterContractError([f"entry point {attr!r} is missing or not callable"])
    model = AdaptedStereoModel(inner, description)
    problems = check_contract(model, description.probe_shape)
    if problems:
        raise AdapterContractError(problems)
    return model


# --------------------------------------------------------------------------
# bundled weights

DATA_DIR = Path(__file__).resolve().parent / "data"
BUNDLED_VICTIM = DATA_DIR / "toy_victim.lrdckpt"
BUNDLED_PROXY = DATA_DIR / "proxy.lrdckpt"


def load_bundled_victim():
    if not BUNDLED_VICTIM.exists():
        raise ConfigurationError(f"bundled victim checkpoint missing at {BUNDLED_VICTIM}; run `lrdstereo train`")
    return load_checkpoint(BUNDLED_VICTIM)


def load_bundled_proxy(pretrained=True, seed=0):
    if not pretrained:
        _seed_everything(seed)
        return ProxyNet().eval()
    if not BUNDLED_PROXY.exists():
        raise ConfigurationError(f"bundled proxy checkpoint missing at {BUNDLED_PROXY}")
    return load_checkpoint(BUNDLED_PROXY)
