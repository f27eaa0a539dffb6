"""Planar-arm manipulation benchmark: simulator, renderer, scripted expert, demo datasets."""

from .dataset import DemoDataset, Episode, GenerationError, generate_demos, run_expert_episode
from .env import (
    CANONICAL_Q,
    TASKS,
    EnvState,
    EpisodeTrace,
    TaskConfig,
    env_reset,
    env_step,
    fk,
    ik,
    proprio,
    task_defaults,
)
from .expert import UnreachableTarget, phase_target, scripted_expert
from .render import observe, render

__all__ = [
    "CANONICAL_Q", "TASKS", "DemoDataset", "EnvState", "Episode", "EpisodeTrace", "GenerationError",
    "TaskConfig", "UnreachableTarget", "env_reset", "env_step", "fk", "generate_demos", "ik", "observe",
    "phase_target", "proprio", "render", "run_expert_episode", "scripted_expert", "task_defaults",
]
