"""Dense-array numerics: autodiff tensors, layers, and the Adam optimizer."""

from .tensor import (
    Tensor,
    concat,
    default_dtype,
    gather_axis1,
    no_grad,
    select_classes,
    set_default_dtype,
    using_dtype,
)
from .layers import (
    Affine,
    BatchNorm,
    Mlp,
    MlpSpec,
    Module,
    activation,
    cross_entropy,
    glorot_uniform,
)
from .optim import Adam, AdamState, adam_step


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss."""
    loss.backward()


def mlp_forward(x: Tensor, mlp: Mlp, mode: str = "train") -> Tensor:
    """Apply a shared MLP to a [rows, channels] tensor."""
    return mlp(x, mode)


def batchnorm_forward(x: Tensor, bn: BatchNorm, mode: str = "train") -> Tensor:
    """Apply batch normalization in the given mode."""
    return bn(x, mode)


__all__ = [
    "Adam", "AdamState", "Affine", "BatchNorm", "Mlp", "MlpSpec", "Module",
    "Tensor", "activation", "adam_step", "backward", "batchnorm_forward",
    "concat", "cross_entropy", "default_dtype", "gather_axis1",
    "glorot_uniform", "mlp_forward", "no_grad", "select_classes",
    "set_default_dtype", "using_dtype",
]
