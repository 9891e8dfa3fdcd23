"""Minimal dense-tensor network kit with hand-written backward passes."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check, numeric_gradient, relative_error
from .layers import BatchNorm, Conv2D, Dropout, Layer, Linear, MaxPool2D, ReLU, Sequential
from .ops import conv2d, dropout, fully_connected, max_pool, relu, roi_pool, roi_pool_many
from .optim import mse_loss, sgd_momentum_step

__all__ = [
    "BatchNorm", "CheckpointError", "Conv2D", "Dropout", "Layer", "Linear", "MaxPool2D", "ReLU",
    "Sequential", "conv2d", "dropout", "finite_diff_check", "fully_connected", "load_checkpoint",
    "max_pool", "mse_loss", "numeric_gradient", "relative_error", "relu", "roi_pool", "roi_pool_many",
    "save_checkpoint", "sgd_momentum_step",
]
