"""Minimal numpy neural-network engine."""

from .augment import AugmentPolicy, NO_AUGMENT, augment_batch, flip_images, shift_images
from .functional import (
    log_softmax,
    logit,
    reverse_sigmoid_noise,
    sigmoid,
    sigmoid_logit,
    softmax,
)
from .layers import Conv3x3, Dense, MaxPool2x2, ReLU
from .losses import LOSS_KINDS
from .network import SOFTMAX, Network, OutputMode, forward, input_jacobian, loss_and_gradients
from .optim import OptimizerState
from .training import train

__all__ = [
    "AugmentPolicy", "NO_AUGMENT", "augment_batch", "flip_images", "shift_images",
    "log_softmax", "logit", "reverse_sigmoid_noise", "sigmoid", "sigmoid_logit", "softmax",
    "Conv3x3", "Dense", "MaxPool2x2", "ReLU", "LOSS_KINDS",
    "SOFTMAX", "Network", "OutputMode", "forward", "input_jacobian", "loss_and_gradients",
    "OptimizerState", "train",
]
