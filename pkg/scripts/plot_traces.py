#!/usr/bin/env python3
"""
Plot Rollout Traces

Plots the barrier value ``h`` over time for the rollouts written by
``cvar-filter simulate`` (``<out>/traces/rollout_*.csv``), with the safe-set
boundary ``h = 0`` marked.

Usage:
    python plot_traces.py path/to/run [--limit N] [--output FILE]

Needs matplotlib (``pip install cvar-filter[plot]``).
"""

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def load_trace(path: Path) -> tuple[list[int], list[float]]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    return [int(row["t"]) for row in rows], [float(row["h"]) for row in rows]


def rollout_index(path: Path) -> int:
    return int(path.stem.rsplit("_", 1)[-1])


def main() -> int:
    parser = argparse.ArgumentParser(description="Plot barrier values of simulated rollouts")
    parser.add_argument("run", type=Path, help="Output directory of a simulate run")
    parser.add_argument("--limit", type=int, default=50, help="Plot at most this many rollouts (default: 50)")
    parser.add_argument("--output", "-o", type=Path, help="Image file (default: <run>/traces.png)")
    args = parser.parse_args()

    paths = sorted((args.run / "traces").glob("rollout_*.csv"), key=rollout_index)[: args.limit]
    if not paths:
        print(f"Error: no traces found under {args.run / 'traces'}", file=sys.stderr)
        return 1

    fig, ax = plt.subplots(figsize=(7, 4))
    for path in paths:
        t, h = load_trace(path)
        ax.plot(t, h, color="tab:blue" if min(h) >= 0 else "tab:red", alpha=0.4, linewidth=0.8)
    ax.axhline(0.0, color="black", linewidth=1.0, linestyle="--")
    ax.set_xlabel("step")
    ax.set_ylabel("h(x)")
    ax.set_title(f"{len(paths)} rollouts from {args.run.name}")
    fig.tight_layout()

    output = args.output or args.run / "traces.png"
    fig.savefig(output, dpi=150)
    plt.close(fig)
    print(f"Wrote {output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
