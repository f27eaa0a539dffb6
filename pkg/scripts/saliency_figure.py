"""Input-gradient saliency of the visual features for the first steps of an episode.

    python scripts/saliency_figure.py --policy runs/final --seed 3 --out saliency.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from koopdiff.benchsim import env_reset, env_step, scripted_expert, task_defaults
from koopdiff.pipeline import PolicyBundle
from koopdiff.pipeline.saliency import saliency


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--policy", required=True)
    p.add_argument("--task", default="latch_pull")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, nargs="+", default=[0, 20, 35])
    p.add_argument("--out", default="saliency.png")
    args = p.parse_args()
    bundle = PolicyBundle.load(args.policy)
    cfg = task_defaults(args.task)

    # frames come from an expert rollout so every map shows a meaningful state
    state, obs = env_reset(cfg, args.seed)
    frames = {0: obs}
    for t in range(1, max(args.steps) + 1):
        state, obs, done, _ = env_step(state, scripted_expert(state, cfg), cfg)
        frames[t] = obs
        if done:
            break
    steps = [s for s in args.steps if s in frames]
    fig, axes = plt.subplots(4, len(steps), figsize=(2.2 * len(steps), 8.4), squeeze=False)
    for j, t in enumerate(steps):
        front, wrist = saliency(bundle, frames[t])
        panels = (frames[t].front_image, front, frames[t].wrist_image, wrist)
        for i, (img, title) in enumerate(zip(panels, ("front", "front saliency", "wrist", "wrist saliency"))):
            axes[i, j].imshow(img, cmap="gray" if i % 2 == 0 else "inferno", vmin=0, vmax=1)
            axes[i, j].set_xticks([])
            axes[i, j].set_yticks([])
            if j == 0:
                axes[i, j].set_ylabel(title)
        axes[0, j].set_title(f"step {t}")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
