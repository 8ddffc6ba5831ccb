"""Render the plot-ready CSV series of a run directory (needs matplotlib).

    python3 scripts/plot_report.py runs/attack-20260101-120000
"""

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from lrdstereo.dataio import read_report  # noqa: E402


def plot_histograms(run, out):
    rows = read_report(run / "histograms.csv")
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(6, 3))
    for series in dict.fromkeys(r["series"] for r in rows):
        pts = [r for r in rows if r["series"] == series]
        ax.step([r["bin_left"] for r in pts], [r["density"] for r in pts], where="post", label=series)
    ax.set_xlabel("disparity (px)")
    ax.set_ylabel("density")
    ax.set_xlim(0, max(r["bin_left"] for r in rows if r["density"] > 0) + 4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "histogram.png", dpi=120)
    return out / "histogram.png"


def plot_profiles(run, out):
    profiles = json.loads((run / "profiles.json").read_text())["profiles"]
    if not profiles:
        return None
    fig, ax = plt.subplots(figsize=(5, 3))
    for phase in dict.fromkeys(p["phase"] for p in profiles):
        by_layer = {}
        for p in profiles:
            if p["phase"] == phase:
                by_layer.setdefault(p["layer"], []).append(p["similarity"])
        layers = list(by_layer)
        ax.plot(layers, [sum(v) / len(v) for v in by_layer.values()], marker="o", label=phase)
    ax.set_ylabel("mean left-right cosine")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "similarity.png", dpi=120)
    return out / "similarity.png"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--out", type=Path, help="defaults to the run directory")
    args = parser.parse_args(argv)
    out = args.out or args.run_dir
    out.mkdir(parents=True, exist_ok=True)
    for path in (plot_histograms(args.run_dir, out), plot_profiles(args.run_dir, out)):
        if path:
            print(path)


if __name__ == "__main__":
    main()
