"""Minimal dense-tensor neural stack with reverse-mode differentiation.

Layers cover exactly what the planners need: conv2d, max-pool, ReLU,
dense, graph convolution, dropout, softmax cross-entropy (plain and
pixel-weighted), SGD/Adam, finite-difference gradient checking, and
bit-exact weight serialization.  Parameters are stored in 32-bit floats;
gradient checks run the whole stack at 64-bit.
"""
from .layers import (
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    GraphConv,
    MaxPool2d,
    ReLU,
    Sequential,
    Tensor,
)
from .losses import (
    occupied_probability,
    occupied_probability_backward,
    softmax_cross_entropy,
    weighted_pixel_cross_entropy,
)
from .optim import SGD, Adam, zero_grad
from .gradcheck import GradCheckReport, grad_check
from .serialize import WeightStore, architecture_hash, load_weights, save_weights

__all__ = [
    "Tensor", "Conv2d", "MaxPool2d", "ReLU", "Dense", "GraphConv", "Dropout",
    "Flatten", "Sequential",
    "softmax_cross_entropy", "weighted_pixel_cross_entropy",
    "occupied_probability", "occupied_probability_backward",
    "SGD", "Adam", "zero_grad",
    "grad_check", "GradCheckReport",
    "WeightStore", "save_weights", "load_weights", "architecture_hash",
]
