"""From-scratch encoder-decoder transformer: parameters, forward/backward, Adam."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig
from .optim import AdamState, DivergenceError, optimizer_step
from .transformer import (
    ModelInputError,
    backward,
    decode,
    encode,
    forward,
    init_params,
    log_softmax,
    loss,
    param_shapes,
)

__all__ = [
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DivergenceError",
    "ModelConfig",
    "ModelInputError",
    "backward",
    "decode",
    "encode",
    "forward",
    "init_params",
    "load_checkpoint",
    "log_softmax",
    "loss",
    "optimizer_step",
    "param_shapes",
    "save_checkpoint",
]
