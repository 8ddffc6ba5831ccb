"""Disparity/image loaders, the random-dot stereogram generator and report sinks."""

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import kernels
from .errors import FormatError, InvalidInputError
from .types import DisparityMap, StereoSample

# --------------------------------------------------------------------------
# PFM


def write_pfm(path, disparity, little_endian=True):
    """Write a grayscale ``Pf`` file; invalid pixels are stored as +inf."""
    if isinstance(disparity, DisparityMap):
        values = np.where(disparity.valid, disparity.values, np.inf)
    else:
        values = np.asarray(disparity, dtype=np.float64)
    h, w = values.shape
    dtype = "<f4" if little_endian else ">f4"
    scale = -1.0 if little_endian else 1.0
    payload = np.flipud(values).astype(dtype).tobytes()
    _atomic_write_bytes(path, f"Pf\n{w} {h}\n{scale}\n".encode("ascii") + payload)


def _read_token_line(data, pos, path):
    end = data.find(b"\n", pos)
    if end < 0:
        raise FormatError(f"{path}: header line starting at byte {pos} is not terminated")
    return data[pos:end].decode("ascii", errors="replace").strip(), end + 1


def load_pfm(path):
    """Read a grayscale PFM; rows come back top-to-bottom, non-finite = invalid."""
    data = Path(path).read_bytes()
    magic, pos = _read_token_line(data, 0, path)
    if magic == "PF":
        raise FormatError(f"{path}: colour PFM ('PF' at byte 0) is not a disparity map")
    if magic != "Pf":
        raise FormatError(f"{path}: expected 'Pf' magic at byte 0, found {magic!r}")
    dims_at = pos
    dims, pos = _read_token_line(data, pos, path)
    m = re.fullmatch(r"(\d+)\s+(\d+)", dims)
    if not m:
        raise FormatError(f"{path}: malformed dimensions {dims!r} at byte {dims_at}")
    w, h = int(m.group(1)), int(m.group(2))
    scale_at = pos
    scale_line, pos = _read_token_line(data, pos, path)
    try:
        scale = float(scale_line)
    except ValueError:
        raise FormatError(f"{path}: malformed scale {scale_line!r} at byte {scale_at}") from None
    if scale == 0:
        raise FormatError(f"{path}: zero scale at byte {scale_at}")
    need = 4 * w * h
    if len(data) - pos < need:
        raise FormatError(f"{path}: payload truncated at byte {len(data)}, need {need} bytes from byte {pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    values = np.flipud(values).astype(np.float64)
    valid = np.isfinite(values)
    return DisparityMap(np.where(valid, values, 0.0), valid)


# --------------------------------------------------------------------------
# KITTI 16-bit PNG


def write_kitti_png(path, disparity):
    """Encode as uint16 ``round(d * 256)``; invalid pixels become 0."""
    raw = np.where(disparity.valid, np.round(disparity.values * 256.0), 0)
    raw = np.clip(raw, 0, 65535).astype(np.uint16)
    ok, buf = cv2.imencode(".png", raw)
    if not ok:
        raise OSError(f"{path}: PNG encoding failed")
    _atomic_write_bytes(path, buf.tobytes())


def load_kitti_png(path):
    """Decode a KITTI disparity PNG: ``raw / 256`` px, raw 0 marks invalid."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: not a readable PNG")
    if raw.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel PNG, got {raw.shape[2]} channels")
    if raw.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit samples, got {raw.dtype}")
    valid = raw > 0
    return DisparityMap(np.where(valid, raw / 256.0, 0.0), valid)


def load_image(path):
    """RGB image scaled to [0, 1] regardless of bit depth."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: not a readable image")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    if raw.ndim == 2:
        raw = np.repeat(raw[..., None], 3, axis=2)
    rgb = cv2.cvtColor(raw[..., :3], cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float64) / scale


def save_image(path, image):
    """8-bit RGB, written atomically; the suffix picks the codec."""
    img = (np.clip(image, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    ok, buf = cv2.imencode(Path(path).suffix or ".png", cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    if not ok:
        raise OSError(f"{path}: image encoding failed")
    _atomic_write_bytes(path, buf.tobytes())


def load_disparity(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return load_pfm(path)
    if suffix == ".png":
        return load_kitti_png(path)
    raise FormatError(f"{path}: unsupported disparity format {suffix!r}")


def load_sample(left_path, right_path, disparity_path=None, sample_id=None):
    gt = load_disparity(disparity_path) if disparity_path else None
    return StereoSample(
        load_image(left_path),
        load_image(right_path),
        gt,
        sample_id or Path(left_path).stem,
    )


# --------------------------------------------------------------------------
# random-dot stereograms


@dataclass
class DisparityField:
    """Ground-truth disparity layout for :func:`generate_stereogram`.

    ``kind`` is one of ``constant`` (``value``), ``halves`` (``left``,
    ``right``), ``box`` (``background``, ``foreground``, ``box`` as fractional
    ``(top, left, bottom, right)``), ``ramp`` (``start`` -> ``end`` along u)
    or ``array`` (``values``).
    """

    kind: str = "constant"
    params: dict = field(default_factory=dict)

    @classmethod
    def coerce(cls, spec):
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, (int, float)):
            return cls("constant", {"value": float(spec)})
        if isinstance(spec, np.ndarray):
            return cls("array", {"values": spec})
        spec = dict(spec)
        return cls(spec.pop("kind", "constant"), spec)

    def render(self, height, width):
        p = self.params
        if self.kind == "constant":
            return np.full((height, width), float(p.get("value", 0.0)))
        if self.kind == "halves":
            out = np.full((height, width), float(p["left"]))
            out[:, width // 2:] = float(p["right"])
            return out
        if self.kind == "box":
            top, left, bottom, right = p.get("box", (0.25, 0.3, 0.75, 0.7))
            out = np.full((height, width), float(p["background"]))
            out[int(top * height):int(bottom * height), int(left * width):int(right * width)] = float(p["foreground"])
            return out
        if self.kind == "ramp":
            return np.tile(np.linspace(float(p["start"]), float(p["end"]), width), (height, 1))
        if self.kind == "array":
            values = np.asarray(p["values"], dtype=np.float64)
            if values.shape != (height, width):
                raise InvalidInputError(f"array field {values.shape} does not match {height}x{width}")
            return values.copy()
        raise InvalidInputError(f"unknown disparity field kind {self.kind!r}")

    def to_dict(self):
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, **params}


def dot_texture(rng, height, width, dot_size=1):
    coarse = rng.random((math.ceil(height / dot_size), math.ceil(width / dot_size), 3))
    tex = np.repeat(np.repeat(coarse, dot_size, axis=0), dot_size, axis=1)
    return tex[:height, :width]


def generate_stereogram(width, height, disparity_field_spec, seed, dot_size=1, sample_id=None):
    """Random-dot pair with exactly known left-image disparity.

    The right image is dot texture; each left pixel copies the right image at
    ``u - D(u, v)`` (linear interpolation for fractional D).  Left pixels
    whose match falls off the image or is hidden behind a nearer surface get
    fresh noise and are invalid in the ground truth.
    """
    spec = DisparityField.coerce(disparity_field_spec)
    disp = spec.render(height, width)
    if not np.all(np.isfinite(disp)) or disp.min() < 0:
        raise InvalidInputError("disparity field must be finite and non-negative")
    if disp.max() >= width / 4:
        raise InvalidInputError(f"max disparity {disp.max():g} must stay below width/4 = {width / 4:g}")
    rng = np.random.default_rng(seed)
    right = dot_texture(rng, height, width, dot_size)
    fresh = rng.random((height, width, 3))
    left, inside = kernels.warp_rows(right, disp, -1.0)
    occluded = kernels.occlusion_mask(disp, -1.0, 0.5)
    valid = inside & ~occluded
    left = np.where(valid[..., None], left, fresh)
    sid = sample_id or f"rds-{spec.kind}-s{seed}"
    return StereoSample(np.clip(left, 0, 1), right, DisparityMap(disp, valid), sid, {"field": spec.to_dict(), "seed": seed})


# --------------------------------------------------------------------------
# reports

REPORT_SCHEMA_VERSION = 1
REPORT_COLUMNS = (
    "schema_version",
    "cell",
    "sample_id",
    "mode",
    "loss_kind",
    "tapped_layer",
    "algorithm",
    "epsilon",
    "steps",
    "step_size",
    "lambda_mix",
    "channel_fraction",
    "seed",
    "reference_source",
    "clean_mae",
    "clean_rmse",
    "clean_d1",
    "attacked_mae",
    "attacked_rmse",
    "attacked_d1",
    "mae_inc_pct",
    "rmse_inc_pct",
    "d1_inc_pct",
    "sim_clean_mean",
    "sim_attacked_mean",
    "sim_drop_pct",
    "final_loss",
    "victim_queries_during_optimization",
    "error",
)


def _fmt(value):
    if isinstance(value, bool):
        return value
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return value
        return float(f"{value:.6g}")
    if isinstance(value, np.integer):
        return int(value)
    return value


def _columns(rows, base):
    cols = list(base)
    extra = sorted({k for r in rows for k in r} - set(cols))
    return cols + extra


def _atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"writing {path} failed: {exc}") from exc


def rows_to_csv(rows, columns=REPORT_COLUMNS):
    cols = _columns(rows, columns)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        full = {"schema_version": REPORT_SCHEMA_VERSION, **row} if "schema_version" in cols else dict(row)
        writer.writerow({k: ("" if full.get(k) is None else _fmt(full.get(k))) for k in cols})
    return buf.getvalue()


def rows_to_json(rows, columns=REPORT_COLUMNS):
    cols = _columns(rows, columns)
    out = []
    for row in rows:
        full = {"schema_version": REPORT_SCHEMA_VERSION, **row} if "schema_version" in cols else dict(row)
        out.append({k: _fmt(full.get(k)) for k in cols})
    return json.dumps(out, indent=1, allow_nan=True)


def write_report(rows, sink_path, fmt="csv", columns=REPORT_COLUMNS):
    """Write one flat record per row; CSV and JSON carry the same fields.

    Column order is ``columns`` followed by any extra keys sorted by name.
    Floats keep 6 significant digits.  The file appears atomically.
    """
    if fmt not in ("csv", "json"):
        raise InvalidInputError(f"report format must be 'csv' or 'json', got {fmt!r}")
    text = rows_to_csv(rows, columns) if fmt == "csv" else rows_to_json(rows, columns)
    _atomic_write_bytes(sink_path, text.encode("utf-8"))
    return Path(sink_path)


def _parse_cell(text):
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_report(path):
    """Parse a report written by :func:`write_report` back into row dicts."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return json.loads(text)
    reader = csv.DictReader(io.StringIO(text))
    return [{k: _parse_cell(v) for k, v in row.items()} for row in reader]


def write_json(path, obj):
    _atomic_write_bytes(path, json.dumps(obj, indent=1, sort_keys=True, default=_json_default).encode("utf-8"))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass
class RunReport:
    """Everything a run directory holds."""

    config: dict
    rows: list = field(default_factory=list)
    profiles: list = field(default_factory=list)  # {"cell", "sample_id", "phase", "layer", "similarity"}
    histograms: list = field(default_factory=list)  # {"series", "bin_left", "bin_right", "density"}
    provenance: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def write_run_directory(report, root, run_id):
    """Lay out ``<root>/<run_id>/{config.json, results.csv, results.json, profiles.json, histograms.csv}``."""
    out = Path(root) / run_id
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", {"schema_version": REPORT_SCHEMA_VERSION, "config": report.config, "provenance": report.provenance})
    write_report(report.rows, out / "results.csv", "csv")
    write_report(report.rows, out / "results.json", "json")
    write_json(out / "profiles.json", {"schema_version": REPORT_SCHEMA_VERSION, "profiles": [{k: _fmt(v) for k, v in p.items()} for p in report.profiles]})
    write_report(report.histograms, out / "histograms.csv", "csv", columns=("series", "bin_left", "bin_right", "density"))
    if report.summary:
        write_json(out / "summary.json", report.summary)
    return out


COMPARISON_ROWS = (("None", None), ("One-shot", "Vanilla"), ("One-shot", "Joint"), ("Iterative", "Vanilla"), ("Iterative", "Joint"))


def comparison_rows(cells):
    """Arrange ``{(target, algorithm, method): MetricsRecord}`` as a method comparison.

    Targets keep first-seen order; each gets the clean row then one-shot and
    iterative rows for the vanilla and joint objectives.
    """
    targets = list(dict.fromkeys(key[0] for key in cells))
    rows = []
    for target in targets:
        for algorithm, method in COMPARISON_ROWS:
            rec = cells.get((target, algorithm, method))
            rows.append(
                {
                    "target": target,
                    "algorithm": algorithm,
                    "method": method or "",
                    "mae": None if rec is None else rec.mae,
                    "rmse": None if rec is None else rec.rmse,
                    "d1_error": None if rec is None else rec.d1_error,
                }
            )
    return rows


def random_field(rng, max_disp=12.0):
    """Draw a random :class:`DisparityField` (used for training data)."""
    kind = rng.choice(["zero", "constant", "halves", "box", "box", "ramp"])
    if kind == "zero":
        return DisparityField("constant", {"value": 0.0})
    if kind == "constant":
        return DisparityField("constant", {"value": float(rng.uniform(0, max_disp))})
    if kind == "halves":
        return DisparityField("halves", {"left": float(rng.uniform(0, max_disp)), "right": float(rng.uniform(0, max_disp))})
    if kind == "box":
        top, left = rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)
        box = (top, left, top + rng.uniform(0.2, 0.45), left + rng.uniform(0.2, 0.45))
        return DisparityField(
            "box",
            {"background": float(rng.uniform(0, max_disp / 2)), "foreground": float(rng.uniform(max_disp / 3, max_disp)), "box": box},
        )
    return DisparityField("ramp", {"start": float(rng.uniform(0, max_disp)), "end": float(rng.uniform(0, max_disp))})


def stereogram_set(n, seed, height=64, width=128, max_disp=12.0):
    """``n`` stereograms with random fields; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        spec = random_field(rng, max_disp)
        out.append(generate_stereogram(width, height, spec, int(rng.integers(2**31)), sample_id=f"train-{seed}-{i}"))
    return out


def scene_stereograms(n, seed, height=64, width=128):
    """Evaluation scenes: a near box over a far background, background-dominated."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        top, left = rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.5)
        spec = DisparityField(
            "box",
            {
                "background": float(rng.uniform(1.0, 3.0)),
                "foreground": float(rng.uniform(6.0, 10.0)),
                "box": (top, left, top + rng.uniform(0.25, 0.45), left + rng.uniform(0.2, 0.35)),
            },
        )
        out.append(generate_stereogram(width, height, spec, int(rng.integers(2**31)), sample_id=f"scene-{seed}-{i}"))
    return out
