"""Numeric kernel: layer ops, batch-norm variants, Adam and gradient checking."""
from .adam import AdamState, adam_step
from .gradcheck import grad_check, numerical_gradient, relative_error
from .norm import (
    BatchNormState,
    CategoricalBNState,
    SandwichBNState,
    batch_norm,
    batch_norm_backward,
    batch_norm_forward,
    categorical_bn,
    categorical_bn_backward,
    categorical_bn_forward,
    sandwich_bn,
    sandwich_bn_backward,
    sandwich_bn_forward,
)
from .ops import (
    avgpool1d,
    avgpool1d_backward,
    avgpool1d_forward,
    conv1d,
    conv1d_backward,
    conv1d_forward,
    elu,
    elu_backward,
    maxpool1d,
    maxpool1d_backward,
    maxpool1d_forward,
    softmax,
    softmax_backward,
    tanh,
    tanh_backward,
    upsample_nearest,
    upsample_nearest_backward,
    upsample_nearest_forward,
)
