import json
import struct

import cv2
import numpy as np
import pytest

from lrdstereo import dataio, kernels
from lrdstereo.errors import FormatError, InvalidInputError
from lrdstereo.metrics import MetricsRecord
from lrdstereo.types import DisparityMap, StereoSample


# ---------------------------------------------------------------- PFM


def test_pfm_round_trip_exact(tmp_path):
    d = DisparityMap.dense(np.array([[1.0, 2.0], [3.0, 4.0]]))
    dataio.write_pfm(tmp_path / "a.pfm", d)
    back = dataio.load_pfm(tmp_path / "a.pfm")
    np.testing.assert_array_equal(back.values, d.values)
    assert back.valid.all()


def _handmade_pfm(path, grid, little):
    h, w = grid.shape
    scale = b"-1.0" if little else b"1.0"
    dtype = "<f4" if little else ">f4"
    path.write_bytes(b"Pf\n%d %d\n" % (w, h) + scale + b"\n" + np.flipud(grid).astype(dtype).tobytes())


def test_pfm_both_endiannesses_decode_same(tmp_path, rng):
    grid = rng.random((5, 7)).astype(np.float32) * 100
    _handmade_pfm(tmp_path / "le.pfm", grid, True)
    _handmade_pfm(tmp_path / "be.pfm", grid, False)
    le, be = dataio.load_pfm(tmp_path / "le.pfm"), dataio.load_pfm(tmp_path / "be.pfm")
    np.testing.assert_array_equal(le.values, be.values)
    np.testing.assert_array_equal(le.values, grid.astype(np.float64))
    dataio.write_pfm(tmp_path / "w.pfm", DisparityMap.dense(grid), little_endian=False)
    np.testing.assert_array_equal(dataio.load_pfm(tmp_path / "w.pfm").values, le.values)


def test_pfm_rows_are_bottom_up(tmp_path):
    grid = np.array([[1.0], [2.0]], dtype=np.float32)
    dataio.write_pfm(tmp_path / "r.pfm", DisparityMap.dense(grid))
    raw = (tmp_path / "r.pfm").read_bytes()
    payload = raw[raw.index(b"-1.0\n") + 5:]
    assert struct.unpack("<2f", payload) == (2.0, 1.0)


def test_pfm_inf_is_invalid(tmp_path):
    grid = np.array([[1.0, np.inf], [3.0, 4.0]], dtype=np.float32)
    _handmade_pfm(tmp_path / "i.pfm", grid, True)
    d = dataio.load_pfm(tmp_path / "i.pfm")
    assert d.valid.tolist() == [[True, False], [True, True]]
    assert d.values[1, 1] == 4.0


def test_pfm_writer_marks_invalid(tmp_path):
    valid = np.array([[True, False]])
    dataio.write_pfm(tmp_path / "v.pfm", DisparityMap(np.array([[1.0, 2.0]]), valid))
    assert dataio.load_pfm(tmp_path / "v.pfm").valid.tolist() == [[True, False]]


@pytest.mark.parametrize(
    "blob,match",
    [
        (b"PF\n1 1\n-1.0\n" + b"\0" * 12, "colour"),
        (b"P6\n1 1\n-1.0\n" + b"\0" * 4, "byte 0"),
        (b"Pf\n1 x\n-1.0\n" + b"\0" * 4, "byte 3"),
        (b"Pf\n1 1\nabc\n" + b"\0" * 4, "byte 7"),
        (b"Pf\n2 2\n-1.0\n" + b"\0" * 4, "truncated"),
        (b"Pf\n2 2", "not terminated"),
    ],
)
def test_pfm_malformed(tmp_path, blob, match):
    (tmp_path / "bad.pfm").write_bytes(blob)
    with pytest.raises(FormatError, match=match):
        dataio.load_pfm(tmp_path / "bad.pfm")


# ---------------------------------------------------------------- KITTI PNG


def test_kitti_format_rule(tmp_path):
    cv2.imwrite(str(tmp_path / "k.png"), np.array([[256, 0], [512, 1]], dtype=np.uint16))
    d = dataio.load_kitti_png(tmp_path / "k.png")
    assert d.values[0, 0] == 1.0 and not d.valid[0, 1]
    assert d.values[1, 0] == 2.0 and d.values[1, 1] == 1 / 256


def test_kitti_round_trip_quantisation(tmp_path, rng):
    values = rng.random((20, 30)) * 200 + 0.01
    dataio.write_kitti_png(tmp_path / "q.png", DisparityMap.dense(values))
    back = dataio.load_kitti_png(tmp_path / "q.png")
    assert back.valid.all()
    assert np.abs(back.values - values).max() <= 1 / 512


def test_kitti_rejects_8bit_and_colour(tmp_path):
    cv2.imwrite(str(tmp_path / "b.png"), np.zeros((2, 2), np.uint8))
    cv2.imwrite(str(tmp_path / "c.png"), np.zeros((2, 2, 3), np.uint16))
    (tmp_path / "n.png").write_bytes(b"nope")
    for name, match in (("b.png", "16-bit"), ("c.png", "single-channel"), ("n.png", "readable")):
        with pytest.raises(FormatError, match=match):
            dataio.load_kitti_png(tmp_path / name)


def test_load_sample_from_files(tmp_path):
    s = dataio.generate_stereogram(32, 16, 2.0, seed=1)
    dataio.save_image(tmp_path / "l.png", s.left)
    dataio.save_image(tmp_path / "r.png", s.right)
    dataio.write_pfm(tmp_path / "d.pfm", s.gt_disparity)
    loaded = dataio.load_sample(tmp_path / "l.png", tmp_path / "r.png", tmp_path / "d.pfm")
    assert loaded.sample_id == "l"
    assert np.abs(loaded.left - s.left).max() <= 0.5 / 255 + 1e-12
    np.testing.assert_array_equal(loaded.gt_disparity.valid, s.gt_disparity.valid)
    with pytest.raises(FormatError):
        dataio.load_disparity(tmp_path / "d.txt")


# ---------------------------------------------------------------- stereograms


def test_zero_field_identical_pair():
    s = dataio.generate_stereogram(40, 12, 0.0, seed=3)
    assert np.array_equal(s.left, s.right) and s.gt_disparity.valid.all()


def test_integer_shift_table():
    s = dataio.generate_stereogram(40, 12, 4.0, seed=3)
    np.testing.assert_array_equal(s.left[:, 4:], s.right[:, :-4])
    assert not s.gt_disparity.valid[:, :4].any()


def test_halves_field_agrees_with_block_matching(backend):
    s = dataio.generate_stereogram(96, 24, {"kind": "halves", "left": 0.0, "right": 8.0}, seed=9)
    found = kernels.block_match(s.left, s.right, 12, 2, 0)
    valid = s.gt_disparity.valid
    agree = (found == s.gt_disparity.values)[valid].mean()
    assert agree >= 0.99


def test_generator_deterministic_and_bounded():
    a = dataio.generate_stereogram(40, 12, {"kind": "ramp", "start": 1, "end": 7}, seed=5)
    b = dataio.generate_stereogram(40, 12, {"kind": "ramp", "start": 1, "end": 7}, seed=5)
    assert np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)
    with pytest.raises(InvalidInputError):
        dataio.generate_stereogram(40, 12, 10.0, seed=5)
    with pytest.raises(InvalidInputError):
        dataio.generate_stereogram(40, 12, -1.0, seed=5)


def test_generator_box_occlusion_invalidated():
    s = dataio.generate_stereogram(64, 16, {"kind": "box", "background": 1, "foreground": 6, "box": (0, 0.5, 1, 0.75)}, seed=2)
    gt = s.gt_disparity
    assert not gt.valid.all()
    # pixels just left of the near box are hidden in the right image
    assert not gt.valid[:, 28:32].all()


def test_field_kinds_and_errors():
    assert dataio.DisparityField.coerce(np.zeros((2, 3))).render(2, 3).shape == (2, 3)
    with pytest.raises(InvalidInputError):
        dataio.DisparityField("array", {"values": np.zeros((2, 2))}).render(2, 3)
    with pytest.raises(InvalidInputError):
        dataio.DisparityField("spiral").render(2, 2)


def test_stereogram_sets_deterministic():
    a, b = dataio.scene_stereograms(2, 4), dataio.scene_stereograms(2, 4)
    assert all(np.array_equal(x.left, y.left) for x, y in zip(a, b))
    assert all(s.gt_disparity.values.max() < 32 for s in dataio.stereogram_set(5, 1))


# ---------------------------------------------------------------- reports


def _row():
    return {
        "cell": "c0-s0",
        "sample_id": "x",
        "mode": "whitebox",
        "epsilon": 0.05,
        "steps": 10,
        "clean_mae": 0.123456789,
        "attacked_mae": 1.23456789e-3,
        "mae_inc_pct": 912.3456,
        "victim_queries_during_optimization": 0,
        "extra_metric": 3.0,
    }


def test_empty_reports(tmp_path):
    dataio.write_report([], tmp_path / "e.csv", "csv")
    dataio.write_report([], tmp_path / "e.json", "json")
    assert (tmp_path / "e.csv").read_text().strip() == ",".join(dataio.REPORT_COLUMNS)
    assert json.loads((tmp_path / "e.json").read_text()) == []


def test_report_round_trip(tmp_path):
    row = _row()
    for fmt in ("csv", "json"):
        path = dataio.write_report([row], tmp_path / f"r.{fmt}", fmt)
        back = dataio.read_report(path)[0]
        assert back["schema_version"] == dataio.REPORT_SCHEMA_VERSION
        for key, value in row.items():
            if isinstance(value, float):
                emitted = float(f"{value:.6g}")
                assert abs(back[key] - emitted) <= 1e-6 * max(1.0, abs(emitted))
                assert back[key] == pytest.approx(value, rel=5e-6)
            else:
                assert back[key] == value
        assert list(back)[-1] == "extra_metric"


def test_csv_and_json_carry_same_content(tmp_path):
    rows = [_row(), {**_row(), "cell": "c1-s0", "error": "boom"}]
    dataio.write_report(rows, tmp_path / "r.csv", "csv")
    dataio.write_report(rows, tmp_path / "r.json", "json")
    assert dataio.read_report(tmp_path / "r.csv") == dataio.read_report(tmp_path / "r.json")


def test_report_bad_format(tmp_path):
    with pytest.raises(InvalidInputError):
        dataio.write_report([], tmp_path / "r.xml", "xml")


def test_atomic_write_leaves_no_temp(tmp_path):
    dataio.write_report([_row()], tmp_path / "sub" / "r.csv")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["r.csv"]


def test_write_failure_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        dataio.write_report([], blocker / "r.csv")


def test_run_directory_layout(tmp_path):
    report = dataio.RunReport(
        config={"attack.eps": 0.05},
        rows=[_row()],
        profiles=[{"cell": "c0-s0", "sample_id": "x", "phase": "clean", "layer": "F1", "similarity": 0.9}],
        histograms=[{"series": "clean", "bin_left": 0.0, "bin_right": 1.0, "density": 1.0}],
        provenance={"seed": 0},
        summary={"orderings": {}},
    )
    out = dataio.write_run_directory(report, tmp_path, "run1")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.json", "histograms.csv", "profiles.json", "results.csv", "results.json", "summary.json"]
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["schema_version"] == 1 and cfg["config"]["attack.eps"] == 0.05


def test_comparison_layout():
    rec = MetricsRecord(1.0, 2.0, 3.0, 10)
    cells = {}
    for victim in ("A", "B", "C"):
        cells[(victim, "None", None)] = rec
        for algo in ("One-shot", "Iterative"):
            for method in ("Vanilla", "Joint"):
                cells[(victim, algo, method)] = rec
    rows = dataio.comparison_rows(cells)
    assert len(rows) == 15
    keys = [(r["target"], r["algorithm"], r["method"]) for r in rows[:5]]
    assert keys == [
        ("A", "None", ""),
        ("A", "One-shot", "Vanilla"),
        ("A", "One-shot", "Joint"),
        ("A", "Iterative", "Vanilla"),
        ("A", "Iterative", "Joint"),
    ]
    assert [r["target"] for r in rows[::5]] == ["A", "B", "C"]
    missing = dataio.comparison_rows({("A", "None", None): rec})
    assert missing[1]["mae"] is None
