"""Dense tensors, convolution kernels and layer-wise backprop."""
from .layers import Context, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ResidualBlock
from .model import (SGD, ActivationTrace, Model, analytic_gradients, cross_entropy, evaluate_loss,
                    finite_diff_check, forward, train_step)
from .ops import apply_activation, conv2d
from .tensor import ConvFilterBank, Tensor

__all__ = [
    "ActivationTrace", "Context", "Conv2D", "ConvFilterBank", "Dense", "Dropout", "Flatten", "Layer",
    "MaxPool2D", "Model", "ResidualBlock", "SGD", "Tensor", "analytic_gradients", "apply_activation",
    "conv2d", "cross_entropy", "evaluate_loss", "finite_diff_check", "forward", "train_step",
]
