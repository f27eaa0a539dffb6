"""Command-line entry point: ``koopdiff <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..aggregator import write_trace
from ..benchsim import DemoDataset, generate_demos, task_defaults, env_reset
from ..benchsim.env import TASKS
from ..diffusion import NonFiniteSampleError
from ..koopman import Observation
from ..numgraph import ContractError, NonFiniteGradientError
from .config import ConfigError, TrainConfig, load_config
from .evaluate import evaluate, rollout
from .infer import VARIANTS
from .model import PolicyBundle
from .saliency import saliency
from .train import TrainingDiverged, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("koopdiff")


def _csv(value: str) -> list:
    return [v for v in value.split(",") if v]


def cmd_gen_demos(args) -> int:
    cfg = task_defaults(args.task)
    ds = generate_demos(cfg, args.n, args.seed, out_dir=args.out)
    print(f"wrote {len(ds)} {args.task} episodes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig()
    if args.config:
        cfg, _ = load_config(args.config)
    if args.epochs is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "epochs": args.epochs})
    ds = DemoDataset.load(args.demos)
    bundle, tlog = train(ds, cfg, out_dir=args.out)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "loss_curve.json").write_text(json.dumps(tlog.epochs, indent=2))
    print(f"trained {cfg.epochs} epochs in {tlog.seconds:.1f}s; f_u frequency {tlog.u_frequency:.4f}")
    print(f"final checkpoint: {Path(args.out) / 'final'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = PolicyBundle.load(args.policy)
    for v in _csv(args.variants):
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    horizons = [int(h) for h in _csv(args.horizons)] if args.horizons else None
    report = evaluate(bundle, _csv(args.tasks), _csv(args.conditions), _csv(args.variants), args.n, args.seed,
                      horizons=horizons)
    Path(args.report).write_text(report.to_json())
    table = report.to_table()
    Path(args.report).with_suffix(".txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_rollout(args) -> int:
    bundle = PolicyBundle.load(args.policy)
    cfg = task_defaults(args.task, init_mode=args.condition,
                        force_grasp_failures=args.force_grasp_failures)
    tr = rollout(bundle, cfg, args.seed, args.variant, keep_pool_trace=bool(args.pool_trace))
    tr.to_csv(args.trace)
    if args.pool_trace:
        write_trace(tr.pool_trace, args.pool_trace)
    print(f"{args.task} seed {args.seed}: {'success' if tr.success else 'failure'} after {len(tr)} steps")
    return EXIT_OK


def cmd_saliency(args) -> int:
    bundle = PolicyBundle.load(args.policy)
    if args.obs:
        data = np.load(args.obs)
        obs = Observation(data["front"], data["wrist"], data["q"])
    else:
        _, obs = env_reset(task_defaults(args.task), args.seed)
    front, wrist = saliency(bundle, obs)
    np.savez(args.out, front=front, wrist=wrist, front_image=obs.front_image, wrist_image=obs.wrist_image)
    print(f"saliency maps written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopdiff", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="generate scripted demonstrations")
    g.add_argument("--task", choices=TASKS, default="latch_pull")
    g.add_argument("--n", type=int, default=80)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_demos)

    t = sub.add_parser("train", help="train a policy bundle")
    t.add_argument("--demos", required=True)
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="success rates over a task/condition/variant grid")
    e.add_argument("--policy", required=True)
    e.add_argument("--tasks", default="latch_pull")
    e.add_argument("--conditions", default="fixed,perturbed")
    e.add_argument("--variants", default=",".join(VARIANTS))
    e.add_argument("--horizons", default="")
    e.add_argument("--n", type=int, default=40)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="run and trace one episode")
    r.add_argument("--policy", required=True)
    r.add_argument("--task", choices=TASKS, default="latch_pull")
    r.add_argument("--condition", choices=("fixed", "perturbed"), default="fixed")
    r.add_argument("--variant", choices=VARIANTS, default="dual")
    r.add_argument("--force-grasp-failures", type=int, default=0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--trace", required=True)
    r.add_argument("--pool-trace")
    r.set_defaults(func=cmd_rollout)

    s = sub.add_parser("saliency", help="input-gradient maps of the visual features")
    s.add_argument("--policy", required=True)
    s.add_argument("--obs", help=".npz with arrays front, wrist, q (default: a reset observation)")
    s.add_argument("--task", choices=TASKS, default="latch_pull")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_saliency)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteSampleError, NonFiniteGradientError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
