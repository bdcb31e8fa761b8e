#!/usr/bin/env python3
"""Render collapse panels from a `qnd simulate` plot_data.csv.

One panel per trajectory, q_n(alpha) against step for every pointer state.
"""

import argparse
import csv
import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load(path):
    traces = defaultdict(lambda: ([], defaultdict(list)))
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        pointers = [c[2:] for c in reader.fieldnames if c.startswith("q_")]
        for row in reader:
            steps, q = traces[int(row["trajectory"])]
            steps.append(int(row["step"]))
            for p in pointers:
                q[p].append(float(row["q_" + p]))
    return pointers, traces


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("plot_data", help="plot_data.csv written by `qnd simulate`")
    ap.add_argument("-o", "--output", default="collapse.png")
    ap.add_argument("-n", "--panels", type=int, default=6, help="trajectories to draw")
    args = ap.parse_args()

    pointers, traces = load(args.plot_data)
    ids = sorted(traces)[: args.panels]
    cols = min(3, len(ids))
    rows = math.ceil(len(ids) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 2.8 * rows), sharey=True, squeeze=False)
    for ax, t in zip(axes.flat, ids):
        steps, q = traces[t]
        for p in pointers:
            ax.plot(steps, q[p], lw=1, label=p)
        ax.set_title(f"trajectory {t}")
        ax.set_xlabel("step")
        ax.set_ylim(-0.02, 1.02)
    for ax in axes.flat[len(ids):]:
        ax.axis("off")
    axes[0][0].set_ylabel("q_n")
    axes[0][0].legend(title="pointer", fontsize="small", ncol=2)
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
