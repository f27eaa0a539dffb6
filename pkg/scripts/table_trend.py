"""Fixed vs perturbed success rates for the three variants over several master seeds.

    python scripts/table_trend.py --seeds 0 1 2 --epochs 100 --out results/trend
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from koopdiff.benchsim import generate_demos, task_defaults
from koopdiff.pipeline import TrainConfig, evaluate, train

VARIANTS = ("dual", "fused-only", "visual-only")
CONDITIONS = ("fixed", "perturbed")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--demos", type=int, default=80)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--out", default="results/trend")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rates = {}
    for seed in args.seeds:
        t0 = time.perf_counter()
        demos = generate_demos(task_defaults("latch_pull"), args.demos, seed)
        bundle, log = train(demos, TrainConfig(epochs=args.epochs, seed=seed), out_dir=out / f"policy_seed{seed}")
        report = evaluate(bundle, ("latch_pull",), CONDITIONS, VARIANTS, args.n, seed)
        (out / f"report_seed{seed}.json").write_text(report.to_json())
        print(report.to_table(), f"seed {seed}: {time.perf_counter() - t0:.0f}s", flush=True)
        for c in CONDITIONS:
            for v in VARIANTS:
                rates.setdefault((c, v), []).append(report.rate("latch_pull", c, v))

    lines = [f"{'variant':<12} {'fixed':>14} {'perturbed':>14}"]
    for v in VARIANTS:
        cells = [f"{100 * np.mean(rates[c, v]):5.1f} +/- {100 * np.std(rates[c, v]):4.1f}" for c in CONDITIONS]
        lines.append(f"{v:<12} {cells[0]:>14} {cells[1]:>14}")
    table = "\n".join(lines)
    print(table)
    (out / "summary.txt").write_text(table + "\n")
    (out / "summary.json").write_text(json.dumps({f"{c}/{v}": r for (c, v), r in rates.items()}, indent=2))


if __name__ == "__main__":
    main()
