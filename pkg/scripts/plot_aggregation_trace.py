"""Per-step view of an aggregation trace written by ``koopdiff rollout --pool-trace``.

Top: test-time loss of every live chunk by branch. Bottom: which branch and
chunk age supplied the executed action.

    python scripts/plot_aggregation_trace.py pool.csv --out pool.png
"""

import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("trace")
    p.add_argument("--out", default="aggregation_trace.png")
    args = p.parse_args()
    with open(args.trace, newline="") as fh:
        rows = list(csv.DictReader(fh))

    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
    colors = {"visual": "tab:blue", "fused": "tab:orange"}
    for branch, color in colors.items():
        fresh = [r for r in rows if r["branch"] == branch and r["offset"] == "0"]
        top.plot([int(r["t"]) for r in fresh], [float(r["e"]) for r in fresh], ".-", color=color, label=branch)
        picked = [r for r in rows if r["branch"] == branch and r["selected"] == "1"]
        bottom.scatter([int(r["t"]) for r in picked], [int(r["offset"]) for r in picked], color=color, s=10,
                       label=branch)
    top.set_ylabel("test-time loss")
    top.legend()
    bottom.set_ylabel("offset of selected row")
    bottom.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
