"""From-scratch differentiable operators, optimizer, and checkpointing."""

from .checkpoint import load_checkpoint, read_container, save_checkpoint, write_container
from .gradcheck import check_layer_gradients, max_rel_error, numeric_gradient
from .layers import (
    AdaptiveAvgPool,
    AvgPool2x2,
    Conv3x3,
    Dense,
    Flatten,
    Layer,
    LeakyReLU,
    Param,
    Tanh,
    layer_from_spec,
)
from .losses import l1_loss, softmax_cross_entropy
from .network import Network, network_from_descriptor
from .optim import Adam

__all__ = [
    "Adam",
    "AdaptiveAvgPool",
    "AvgPool2x2",
    "Conv3x3",
    "Dense",
    "Flatten",
    "Layer",
    "LeakyReLU",
    "Network",
    "Param",
    "Tanh",
    "check_layer_gradients",
    "l1_loss",
    "layer_from_spec",
    "load_checkpoint",
    "max_rel_error",
    "network_from_descriptor",
    "numeric_gradient",
    "read_container",
    "save_checkpoint",
    "softmax_cross_entropy",
    "write_container",
]
