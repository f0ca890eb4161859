#!/usr/bin/env python3
"""
Plot a Confidence-Level Sweep

Reads the ``sweep.csv`` written by ``cvar-filter sweep`` and plots violation
rate and mean interference against beta.

Usage:
    python plot_sweep.py [path/to/sweep.csv] [--output FILE]

Needs matplotlib (``pip install cvar-filter[plot]``).
"""

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def load_sweep(path: Path) -> dict[str, list[float]]:
    """Load sweep rows as columns; empty cells become NaN."""
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    columns = ("beta", "violation_rate", "mean_interference")
    return {key: [float(row[key]) if row[key] else float("nan") for row in rows] for key in columns}


def plot(sweep: dict[str, list[float]], output: Path) -> None:
    order = sorted(range(len(sweep["beta"])), key=lambda i: sweep["beta"][i])
    betas = [sweep["beta"][i] for i in order]

    fig, (ax_rate, ax_cost) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax_rate.plot(betas, [sweep["violation_rate"][i] for i in order], "o-", color="tab:red")
    ax_rate.set_ylabel("violation rate")
    ax_rate.set_ylim(-0.02, 1.02)
    ax_rate.grid(True, alpha=0.3)

    ax_cost.plot(betas, [sweep["mean_interference"][i] for i in order], "s-", color="tab:blue")
    ax_cost.set_ylabel("mean |u - u_legacy|^2")
    ax_cost.set_xlabel("beta")
    ax_cost.grid(True, alpha=0.3)

    fig.tight_layout()
    fig.savefig(output, dpi=150)
    plt.close(fig)


def main() -> int:
    parser = argparse.ArgumentParser(description="Plot violation rate against beta")
    parser.add_argument("sweep", nargs="?", type=Path, default=Path("sweep.csv"), help="sweep.csv to plot")
    parser.add_argument("--output", "-o", type=Path, help="Image file (default: next to the CSV)")
    args = parser.parse_args()

    if not args.sweep.exists():
        print(f"Error: {args.sweep} not found", file=sys.stderr)
        return 1

    output = args.output or args.sweep.with_suffix(".png")
    plot(load_sweep(args.sweep), output)
    print(f"Wrote {output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
