#!/usr/bin/env python3
# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Plot success against training-set size from an ``ablate`` report document.

    python scripts/plot_sweep.py ablation/ablation.yaml -o sweep.png
"""

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import yaml  # noqa: E402

REPORT_HEADER = "RANDGRASP-REPORT v1"
SERIES = (
    ("cube_vicinity", "Cube vicinity", "o"),
    ("cube_grasped", "Cube grasped", "s"),
    ("full_task", "Full task", "^"),
)


def load_sweep(path: Path):
    header, _, body = path.read_text().partition("\n")
    if header.strip() != REPORT_HEADER:
        raise SystemExit(f"{path}: not a report document")
    points = [p for p in (yaml.safe_load(body) or {}).get("sweep", []) if p.get("report")]
    if not points:
        raise SystemExit(f"{path}: no completed sweep points")
    return sorted(points, key=lambda p: p["frames"])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("report", type=Path)
    parser.add_argument("-o", "--out", type=Path, default=Path("sweep.png"))
    args = parser.parse_args(argv)

    points = load_sweep(args.report)
    frames = [p["frames"] for p in points]
    fig, ax = plt.subplots(figsize=(5, 3.5), facecolor="w")
    for key, label, marker in SERIES:
        ax.plot(frames, [p["report"][key] for p in points], marker=marker, label=label)
    ax.set_xscale("log")
    ax.set_ylim(-5, 105)
    ax.set_xlabel("Training frames")
    ax.set_ylabel("Success (%)")
    ax.legend(loc="lower right", frameon=False)
    ax.grid(alpha=0.3)
    fig.savefig(args.out, bbox_inches="tight", dpi=150)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
