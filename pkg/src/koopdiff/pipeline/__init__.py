"""Training, inference, evaluation and the command-line interface."""

from .config import ConfigError, TrainConfig, load_config
from .evaluate import CONDITIONS, CellResult, EvalReport, evaluate, rollout, run_cell
from .infer import VARIANTS, InferState, RoundResult, infer_round
from .model import Normalizer, PolicyBundle, PolicyModel
from .saliency import saliency, saliency_maps
from .train import TrainingDiverged, TrainLog, loss_terms, train, train_step

__all__ = [
    "CONDITIONS", "VARIANTS", "CellResult", "ConfigError", "EvalReport", "InferState", "Normalizer",
    "PolicyBundle", "PolicyModel", "RoundResult", "TrainConfig", "TrainLog", "TrainingDiverged", "evaluate",
    "infer_round", "load_config", "loss_terms", "rollout", "run_cell", "saliency", "saliency_maps", "train",
    "train_step",
]
