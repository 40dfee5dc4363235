"""Tensors, reverse-mode differentiation and the primitive ops."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn import BatchNorm, Conv2d, Conv3d, Module, ModuleList, Parameter
from .ops import (
    NO_DATA,
    ConfigurationError,
    IndexMap,
    IntegrityError,
    batchnorm,
    bilinear_matrix,
    concat_channels,
    conv2d,
    conv3d,
    max_unpool2d,
    maxpool2d_with_indices,
    nearest_matrix,
    relu,
    resample_separable,
    residual_add,
    softmax_cross_entropy,
    upsample,
)
from .optim import SGD, Adam, build_optimizer
from .tensor import Tensor, is_grad_enabled, no_grad

__all__ = [
    "Adam", "BatchNorm", "CheckpointError", "ConfigurationError", "Conv2d", "Conv3d",
    "IndexMap", "IntegrityError", "Module", "ModuleList", "NO_DATA", "Parameter", "SGD",
    "Tensor", "batchnorm", "bilinear_matrix", "build_optimizer", "concat_channels",
    "conv2d", "conv3d", "is_grad_enabled", "load_checkpoint", "max_unpool2d",
    "maxpool2d_with_indices", "nearest_matrix", "no_grad", "relu", "resample_separable",
    "residual_add", "save_checkpoint", "softmax_cross_entropy", "upsample",
]
