"""Protocols, training loop, studies and the command line."""
from .config import EvalConfig, ProtocolConfig, TrainConfig, config_from_dict, load_config
from .evaluate import EvaluationResult, evaluate, summarize, train_model
from .study import StudyResult, run_colored_mnist_study, run_grouped_study

__all__ = [
    "EvalConfig", "EvaluationResult", "ProtocolConfig", "StudyResult", "TrainConfig", "config_from_dict",
    "evaluate", "load_config", "run_colored_mnist_study", "run_grouped_study", "summarize", "train_model",
]
