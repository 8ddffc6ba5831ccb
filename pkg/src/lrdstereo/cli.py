"""``lrdstereo`` command line: train, attack, sweep, profile, histogram.

Exit codes: 0 success, 2 configuration error, 3 contract violation,
4 numerical failure.
"""

import argparse
import ast
import datetime
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__, dataio, metrics
from .attack import AttackConfig, grid, sweep
from .errors import ConfigurationError, ContractViolation, FormatError, InvalidInputError, NumericalError
from .losses import LossConfig
from .models import (
    BUNDLED_PROXY,
    BUNDLED_VICTIM,
    ToyStereoNet,
    load_checkpoint,
    load_bundled_proxy,
    predict,
    save_checkpoint,
    train_toy,
)

log = logging.getLogger("lrdstereo")

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "LRDSTEREO_OUTPUT_ROOT"


class ConfigError(ConfigurationError):
    pass


# --------------------------------------------------------------------------
# flat dotted-key config

# key -> (type, default)
KEYS = {
    "train.epochs": (int, 30),
    "train.lr": (float, 2e-3),
    "train.seed": (int, 0),
    "train.samples": (int, 256),
    "train.batch_size": (int, 8),
    "train.crop_h": (int, 32),
    "train.crop_w": (int, 96),
    "train.heldout": (int, 16),
    "attack.mode": (str, "whitebox"),
    "attack.eps": (float, 0.02),
    "attack.steps": (int, 10),
    "attack.step_size": (float, None),
    "attack.seed": (int, 0),
    "attack.single_sided": (bool, False),
    "loss.kind": (str, "joint"),
    "loss.lambda": (float, 1.0),
    "loss.layer": (str, None),
    "loss.channel_fraction": (float, 1.0),
    "loss.channel_seed": (int, 0),
    "loss.warp_sign": (int, -1),
    "model.checkpoint": (str, None),
    "model.proxy_checkpoint": (str, None),
    "model.random_proxy": (bool, False),
    "sample.source": (str, "scene:0"),
    "sample.count": (int, 10),
    "sample.seed": (int, 2024),
    "sample.dataset": (str, "scene"),
    "histogram.bin_width": (float, 1.0),
    "histogram.max": (float, 192.0),
}


def _convert(key, raw, where):
    typ, _ = KEYS[key]
    if raw is None or isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if typ is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            value = float(text)
            if value != int(value):
                raise ValueError(text)
            return int(value)
        return typ(text)
    except ValueError:
        raise ConfigError(f"{where}: field {key!r} expects {typ.__name__}, got {text!r}") from None


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines (``#`` comments); unknown keys are errors."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown field {key!r}")
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
            raw = ast.literal_eval(raw)
        out[key] = _convert(key, raw, f"{source}:{lineno}")
    return out


def effective_config(args, flag_map):
    """Defaults, then the config file, then explicit flags."""
    cfg = {k: default for k, (_, default) in KEYS.items()}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cfg.update(parse_config_text(path.read_text(), str(path)))
    for dest, key in flag_map.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[key] = _convert(key, value, f"--{dest.replace('_', '-')}")
    return cfg


# --------------------------------------------------------------------------
# samples and models


def _sample_from_source(source, cfg_seed=0):
    kind, _, rest = source.partition(":")
    parts = [p for p in rest.split(":") if p]
    if kind == "scene":
        seed = int(parts[0]) if parts else cfg_seed
        return dataio.scene_stereograms(1, seed)[0]
    if kind == "random":
        seed = int(parts[0]) if parts else cfg_seed
        return dataio.stereogram_set(1, seed)[0]
    if kind == "const":
        value = float(parts[0]) if parts else 4.0
        seed = int(parts[1]) if len(parts) > 1 else cfg_seed
        return dataio.generate_stereogram(128, 64, value, seed, sample_id=f"const{value:g}-s{seed}")
    raise ConfigError(f"sample source {source!r}: expected scene:SEED, random:SEED or const:VALUE:SEED")


def load_samples(args, cfg, count=None):
    if getattr(args, "left", None):
        if not args.right:
            raise ConfigError("--left needs --right")
        samples = [dataio.load_sample(args.left, args.right, args.disparity)]
    elif count is not None:
        n = count
        if cfg["sample.dataset"] == "scene":
            samples = dataio.scene_stereograms(n, cfg["sample.seed"])
        elif cfg["sample.dataset"] == "random":
            samples = dataio.stereogram_set(n, cfg["sample.seed"])
        else:
            raise ConfigError(f"sample.dataset must be 'scene' or 'random', got {cfg['sample.dataset']!r}")
    else:
        samples = [_sample_from_source(cfg["sample.source"])]
    if getattr(args, "no_gt", False):
        for s in samples:
            s.gt_disparity = None
    return samples


def load_victim(cfg):
    path = cfg["model.checkpoint"] or BUNDLED_VICTIM
    if not Path(path).exists():
        raise ConfigError(f"victim checkpoint {path} not found; run `lrdstereo train` first")
    return load_checkpoint(path)


def load_proxy(cfg):
    if cfg["model.random_proxy"]:
        return load_bundled_proxy(pretrained=False, seed=cfg["attack.seed"])
    path = cfg["model.proxy_checkpoint"] or BUNDLED_PROXY
    if not Path(path).exists():
        raise ConfigError(f"proxy checkpoint {path} not found")
    return load_checkpoint(path)


def attack_config(cfg, **over):
    mode = over.get("mode", cfg["attack.mode"])
    kind = over.get("loss_kind", cfg["loss.kind"])
    if mode == "blackbox_proxy" and "loss_kind" not in over:
        kind = "proxy"
    layer = over.get("tapped_layer", cfg["loss.layer"])
    if layer is None:
        layer = "F1p" if kind == "proxy" else DEFAULT_WHITEBOX_LAYER
    loss = LossConfig(
        loss_kind=kind,
        lambda_mix=cfg["loss.lambda"],
        tapped_layer=layer,
        channel_fraction=over.get("channel_fraction", cfg["loss.channel_fraction"]),
        channel_seed=cfg["loss.channel_seed"],
        warp_sign=cfg["loss.warp_sign"],
    )
    steps = over.get("steps", cfg["attack.steps"])
    step_size = over.get("step_size", cfg["attack.step_size"])
    return AttackConfig(
        epsilon=over.get("epsilon", cfg["attack.eps"]),
        steps=steps,
        step_size=step_size,
        mode=mode,
        loss=loss,
        seed=cfg["attack.seed"],
        perturb_both=not cfg["attack.single_sided"],
    )


# Most effective warp tap of the bundled victim in the one-shot layer ablation
# on held-out scenes (sample seed 7); see README.
DEFAULT_WHITEBOX_LAYER = "F3"


def _output_dir(args, prefix):
    root = Path(args.out or os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    run_id = args.run_id or f"{prefix}-{datetime.datetime.now().strftime('%Y%m%d-%H%M%S')}"
    return root, run_id


def _provenance(cfg):
    return {
        "toolkit_version": __version__,
        "torch_version": torch.__version__,
        "seed": cfg.get("attack.seed"),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _profile_rows(cell_id, result):
    rows = []
    for phase, prof in (("clean", result.similarity_clean), ("attacked", result.similarity_attacked)):
        if prof is None:
            continue
        for layer, sim in prof.layers:
            rows.append({"cell": cell_id, "sample_id": result.sample_id, "phase": phase, "layer": layer, "similarity": sim})
    return rows


def _histogram_rows(series, hist):
    return [
        {"series": series, "bin_left": float(lo), "bin_right": float(hi), "density": float(d)}
        for lo, hi, d in zip(hist.edges[:-1], hist.edges[1:], hist.density)
    ]


# --------------------------------------------------------------------------
# subcommands


def recipe_dataset(cfg):
    return dataio.stereogram_set(cfg["train.samples"], cfg["train.seed"])


def cmd_train(args):
    cfg = effective_config(args, {"epochs": "train.epochs", "lr": "train.lr", "seed": "train.seed", "samples": "train.samples"})
    if cfg["train.lr"] < 0 or cfg["train.epochs"] < 0 or cfg["train.samples"] < 1:
        raise ConfigError("train.lr and train.epochs must be >= 0 and train.samples >= 1")
    data = recipe_dataset(cfg)
    start = time.time()

    def progress(epoch, loss):
        log.info("epoch %d loss %.4f (%.0fs)", epoch, loss, time.time() - start)

    result = train_toy(
        data,
        epochs=cfg["train.epochs"],
        lr=cfg["train.lr"],
        seed=cfg["train.seed"],
        batch_size=cfg["train.batch_size"],
        crop=(cfg["train.crop_h"], cfg["train.crop_w"]),
        progress=progress,
    )
    held = dataio.stereogram_set(cfg["train.heldout"], cfg["train.seed"] + 999)
    maes = [metrics.compute_metrics(predict(result.model, s), s.gt_disparity).mae for s in held]
    out = Path(args.checkpoint_out or BUNDLED_VICTIM)
    meta = {
        "recipe": {k: v for k, v in cfg.items() if k.startswith("train.")},
        "epoch_loss": [float(f"{x:.6g}") for x in result.epoch_loss],
        "heldout_mae": float(f"{np.mean(maes):.6g}"),
    }
    save_checkpoint(result.model, out, meta)
    print(f"checkpoint: {out}")
    print(f"held-out MAE: {np.mean(maes):.4f} px over {len(held)} stereograms")
    return EXIT_OK


def _attack_flags():
    return {
        "mode": "attack.mode",
        "eps": "attack.eps",
        "steps": "attack.steps",
        "step_size": "attack.step_size",
        "seed": "attack.seed",
        "single_sided": "attack.single_sided",
        "loss": "loss.kind",
        "lambda_mix": "loss.lambda",
        "layer": "loss.layer",
        "channel_fraction": "loss.channel_fraction",
        "channel_seed": "loss.channel_seed",
        "warp_sign": "loss.warp_sign",
        "checkpoint": "model.checkpoint",
        "proxy_checkpoint": "model.proxy_checkpoint",
        "random_proxy": "model.random_proxy",
        "sample": "sample.source",
        "samples": "sample.count",
        "sample_seed": "sample.seed",
        "dataset": "sample.dataset",
    }


def cmd_attack(args):
    cfg = effective_config(args, _attack_flags())
    acfg = attack_config(cfg)
    samples = load_samples(args, cfg)
    if acfg.mode == "blackbox_proxy" and any(s.gt_disparity is None for s in samples):
        raise ConfigError("ground truth required for the black-box proxy attack")
    victim = load_victim(cfg)
    proxy = load_proxy(cfg) if acfg.mode == "blackbox_proxy" else None
    cells = sweep([acfg], samples, victim, proxy)
    failed = [c for c in cells if not c.ok]
    if failed:
        err = failed[0].error
        if err.startswith("BudgetViolation") or err.startswith("ContractViolation"):
            raise ContractViolation(err)
        if err.startswith("NumericalError"):
            raise NumericalError(err)
        raise ConfigError(err)
    root, run_id = _output_dir(args, "attack")
    report = dataio.RunReport(
        config={"effective": cfg, "attack": acfg.to_dict()},
        rows=[c.row() for c in cells],
        profiles=[p for c in cells for p in _profile_rows(c.row()["cell"], c.result)],
        histograms=_histogram_rows("clean", metrics.disparity_histogram([c.result.clean_prediction for c in cells]))
        + _histogram_rows("attacked", metrics.disparity_histogram([c.result.perturbed_prediction for c in cells])),
        provenance=_provenance(cfg),
    )
    out = dataio.write_run_directory(report, root, run_id)
    for c in cells:
        r = c.result
        print(f"{r.sample_id}: clean MAE {r.metrics_clean.mae:.4f} -> attacked MAE {r.metrics_attacked.mae:.4f}")
    print(f"report: {out}")
    return EXIT_OK


PRESETS = ("methods", "victim-layers", "proxy-layers", "proxy-half")


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text is not None else None


def preset_grid(name, base):
    if name == "methods":
        return grid(base, steps=[1, 10], loss__loss_kind=["disparity_only", "joint"])
    if name == "victim-layers":
        return grid(base.with_overrides(steps=1, **{"loss.loss_kind": "warp_only"}), loss__tapped_layer=["F1", "F2", "F3"])
    proxy = base.with_overrides(mode="blackbox_proxy", **{"loss.loss_kind": "proxy"})
    if name == "proxy-layers":
        return grid(proxy, loss__tapped_layer=["F1p", "F2p", "F3p", "F4p"])
    if name == "proxy-half":
        return grid(proxy.with_overrides(**{"loss.channel_fraction": 0.5}), loss__tapped_layer=["F1p", "F2p", "F3p", "F4p"])
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def trend_summary(cells):
    """Medians per grid coordinate plus which directional orderings held."""
    groups = {}
    for c in cells:
        if c.ok:
            key = tuple(sorted((k, str(v)) for k, v in c.coords.items()))
            groups.setdefault(key, []).append(c.result)
    medians = {
        ";".join(f"{k}={v}" for k, v in key): {
            "attacked_mae": float(np.median([r.metrics_attacked.mae for r in rs])),
            "clean_mae": float(np.median([r.metrics_clean.mae for r in rs])),
            "mae_inc_pct": float(np.median([r.mae_inc_pct for r in rs])),
            "n": len(rs),
        }
        for key, rs in groups.items()
    }
    checks = {}
    layer_meds = {}
    for key, stats in medians.items():
        coords = dict(part.split("=", 1) for part in key.split(";") if part)
        if set(coords) == {"loss.tapped_layer"}:
            layer_meds[coords["loss.tapped_layer"]] = stats["mae_inc_pct"]
    proxy_layers = [l for l in ("F1p", "F2p", "F3p", "F4p") if l in layer_meds]
    if len(proxy_layers) >= 2:
        seq = [layer_meds[l] for l in proxy_layers]
        pairs = [a >= b for a, b in zip(seq, seq[1:])]
        checks["proxy_mae_inc_non_increasing_pairs"] = f"{sum(pairs)}/{len(pairs)}"
        checks["proxy_shallowest_beats_deepest"] = bool(seq[0] >= seq[-1])
    victim_layers = [l for l in ("F1", "F2", "F3") if l in layer_meds]
    if len(victim_layers) >= 2:
        checks["warp_shallowest_beats_deepest"] = bool(layer_meds[victim_layers[0]] >= layer_meds[victim_layers[-1]])
    for steps in ("1", "10"):
        joint = medians.get(f"loss.loss_kind=joint;steps={steps}")
        vanilla = medians.get(f"loss.loss_kind=disparity_only;steps={steps}")
        if joint and vanilla:
            checks[f"joint_beats_vanilla_steps{steps}"] = bool(joint["attacked_mae"] >= vanilla["attacked_mae"])
    return {"medians": medians, "orderings": checks}


def cmd_sweep(args):
    cfg = effective_config(args, _attack_flags())
    base = attack_config(cfg)
    if args.preset:
        cells_cfg = preset_grid(args.preset, base)
    else:
        axes = {}
        for flag, key, conv in (
            ("layers", "loss__tapped_layer", str),
            ("losses", "loss__loss_kind", str),
            ("eps_list", "epsilon", float),
            ("steps_list", "steps", int),
        ):
            values = _split(getattr(args, flag))
            if values is not None:
                axes[key] = [conv(v) for v in values]
        cells_cfg = grid(base, **axes)
    if args.preset == "victim-layers" and not args.left:
        # two stereogram families stand in for the two evaluation datasets
        n, seed = cfg["sample.count"], cfg["sample.seed"]
        samples = dataio.scene_stereograms(n, seed) + dataio.stereogram_set(n, seed)
    else:
        samples = load_samples(args, cfg, count=cfg["sample.count"])
    needs_proxy = any(c.mode == "blackbox_proxy" for _, c in cells_cfg)
    victim = load_victim(cfg)
    proxy = load_proxy(cfg) if needs_proxy else None
    root, run_id = _output_dir(args, "sweep")
    cells = sweep(cells_cfg, samples, victim, proxy, workers=args.workers)
    rows = [c.row() for c in cells]
    summary = trend_summary(cells)
    report = dataio.RunReport(
        config={"effective": cfg, "grid": [coords for coords, _ in cells_cfg], "preset": args.preset},
        rows=rows,
        profiles=[p for c in cells if c.ok for p in _profile_rows(c.row()["cell"], c.result)],
        provenance=_provenance(cfg),
        summary=summary,
    )
    out = dataio.write_run_directory(report, root, run_id)
    if args.preset == "methods":
        grouped = {}
        for c in cells:
            if not c.ok:
                continue
            algo = "One-shot" if c.config.steps == 1 else "Iterative"
            method = "Joint" if c.config.loss.loss_kind == "joint" else "Vanilla"
            grouped.setdefault(("toy", algo, method), []).append(c.result.metrics_attacked)
            grouped.setdefault(("toy", "None", None), []).append(c.result.metrics_clean)
        merged = {k: _median_record(v) for k, v in grouped.items()}
        dataio.write_report(dataio.comparison_rows(merged), out / "comparison.csv", "csv", columns=("target", "algorithm", "method", "mae", "rmse", "d1_error"))
    print(f"{len(rows)} cells, {sum(not c.ok for c in cells)} failed")
    for name, held in summary["orderings"].items():
        print(f"  {name}: {held}")
    print(f"report: {out}")
    return EXIT_OK


def _median_record(records):
    return metrics.MetricsRecord(
        float(np.median([r.mae for r in records])),
        float(np.median([r.rmse for r in records])),
        float(np.median([r.d1_error for r in records])),
        int(sum(r.valid_pixel_count for r in records)),
    )


def cmd_profile(args):
    cfg = effective_config(args, _attack_flags())
    victim = load_victim(cfg)
    samples = load_samples(args, cfg)
    rows = []
    for s in samples:
        from .losses import reference_disparity

        d_ref, source = reference_disparity(s, victim)
        prof = metrics.similarity_profile(victim, s, d_ref, cfg["loss.warp_sign"])
        rows += [{"cell": "clean", "sample_id": s.sample_id, "phase": "clean", "layer": l, "similarity": v, "reference": source} for l, v in prof.layers]
        print(f"{s.sample_id}: " + ", ".join(f"{l}={v:.4f}" for l, v in prof.layers) + f" (mean {prof.mean:.4f})")
    root, run_id = _output_dir(args, "profile")
    report = dataio.RunReport(config={"effective": cfg}, profiles=rows, provenance=_provenance(cfg))
    out = dataio.write_run_directory(report, root, run_id)
    dataio.write_report(rows, out / "profiles.csv", "csv", columns=("sample_id", "phase", "layer", "similarity", "reference"))
    print(f"report: {out}")
    return EXIT_OK


def cmd_histogram(args):
    cfg = effective_config(args, _attack_flags())
    victim = load_victim(cfg)
    samples = load_samples(args, cfg, count=cfg["sample.count"])
    maps = {"clean": [predict(victim, s) for s in samples]}
    if args.attacked:
        acfg = attack_config(cfg)
        proxy = load_proxy(cfg) if acfg.mode == "blackbox_proxy" else None
        cells = sweep([acfg], samples, victim, proxy, profile=False)
        maps["attacked"] = [c.result.perturbed_prediction for c in cells if c.ok]
    rows = []
    for series, ms in maps.items():
        hist = metrics.disparity_histogram(ms, cfg["histogram.bin_width"], (0.0, cfg["histogram.max"]))
        rows += _histogram_rows(series, hist)
        print(f"{series}: peak at {hist.peak:g} px")
    root, run_id = _output_dir(args, "histogram")
    out = dataio.write_run_directory(dataio.RunReport(config={"effective": cfg}, histograms=rows, provenance=_provenance(cfg)), root, run_id)
    print(f"report: {out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="flat 'key = value' config file (dotted keys)")
    p.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    p.add_argument("--run-id", help="run directory name under the output root")


def _add_attack_options(p):
    g = p.add_argument_group("attack")
    g.add_argument("--mode", choices=["whitebox", "blackbox_proxy"])
    g.add_argument("--loss", choices=["disparity_only", "warp_only", "joint", "proxy"])
    g.add_argument("--layer", help="tap name: F1..F3 (victim) or F1p..F4p (proxy)")
    g.add_argument("--eps", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--step-size", type=float)
    g.add_argument("--lambda", dest="lambda_mix", type=float)
    g.add_argument("--channel-fraction", type=float)
    g.add_argument("--channel-seed", type=int)
    g.add_argument("--warp-sign", type=int, choices=[-1, 1])
    g.add_argument("--seed", type=int)
    g.add_argument("--single-sided", action="store_const", const=True, help="perturb only the right image")
    m = p.add_argument_group("models and data")
    m.add_argument("--checkpoint", help="victim checkpoint (default: bundled toy victim)")
    m.add_argument("--proxy-checkpoint")
    m.add_argument("--random-proxy", action="store_const", const=True, help="use an untrained proxy")
    m.add_argument("--sample", help="scene:SEED | random:SEED | const:VALUE:SEED")
    m.add_argument("--samples", type=int, help="number of generated stereograms (sweep/histogram)")
    m.add_argument("--sample-seed", type=int)
    m.add_argument("--dataset", choices=["scene", "random"])
    m.add_argument("--left")
    m.add_argument("--right")
    m.add_argument("--disparity", help="PFM or 16-bit PNG ground truth")
    m.add_argument("--no-gt", action="store_true", help="drop ground truth from the sample")


def build_parser():
    parser = argparse.ArgumentParser(prog="lrdstereo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the toy victim")
    _add_common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--checkpoint-out", help="where to write the checkpoint (default: bundled path)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run one attack and write a report")
    _add_common(p)
    _add_attack_options(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run an attack grid")
    _add_common(p)
    _add_attack_options(p)
    p.add_argument(
        "--preset",
        choices=PRESETS,
        help="methods: vanilla vs joint x one-shot vs iterative; victim-layers: one-shot warp attack per tap "
        "on two stereogram families; proxy-layers: proxy attack per proxy tap; proxy-half: same with half the channels",
    )
    p.add_argument("--layers", help="comma list of taps")
    p.add_argument("--losses", help="comma list of loss kinds")
    p.add_argument("--eps-list", help="comma list of budgets")
    p.add_argument("--steps-list", help="comma list of step counts")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("profile", help="per-layer left-right similarity of the victim")
    _add_common(p)
    _add_attack_options(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("histogram", help="disparity distribution of clean (and attacked) predictions")
    _add_common(p)
    _add_attack_options(p)
    p.add_argument("--attacked", action="store_true", help="also histogram attacked predictions")
    p.set_defaults(func=cmd_histogram)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, FormatError, InvalidInputError) as exc:
        print(f"lrdstereo: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"lrdstereo: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericalError as exc:
        print(f"lrdstereo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
