"""Aspect-level sentiment classification with convolutional networks whose
filters or gates are generated from the aspect term."""
from .embeddings import EmbeddingTable, Vocabulary, load_pretrained
from .model import ModelConfig, ModelParams, init_params, predict, predict_proba
from .tensor import RngStream, Tensor, grad_check
from .train import TrainConfig, TrainReport, Trainer, evaluate

__version__ = "0.1.0"

__all__ = [
    "EmbeddingTable", "Vocabulary", "load_pretrained",
    "ModelConfig", "ModelParams", "init_params", "predict", "predict_proba",
    "RngStream", "Tensor", "grad_check",
    "TrainConfig", "TrainReport", "Trainer", "evaluate",
]
