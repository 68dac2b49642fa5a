from .model import (
    DivergenceError,
    HolisticModel,
    LossKind,
    NetworkConfig,
    SupervisionWeights,
    forward,
    loss_and_grad,
    predict,
    resolve_loss,
    total_loss,
)
from .train import LogRow, Phase, evaluate, format_log, parse_log, train

__all__ = [
    "DivergenceError",
    "HolisticModel",
    "LogRow",
    "LossKind",
    "NetworkConfig",
    "Phase",
    "SupervisionWeights",
    "evaluate",
    "format_log",
    "forward",
    "loss_and_grad",
    "parse_log",
    "predict",
    "resolve_loss",
    "total_loss",
    "train",
]
