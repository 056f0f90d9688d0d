"""Differentiable 1-D layer primitives on ``[batch, channels, time]`` arrays.

Each op comes as a ``*_forward``/``*_backward`` pair. Forward functions return
the output and whatever the backward pass needs; backward functions take the
upstream gradient and return gradients w.r.t. every differentiable argument.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._validation import check_axis, check_tensor
from ..exceptions import ContractError


def conv1d_forward(x, kernel, bias):
    """Zero-padded "same" convolution (cross-correlation, as in deep-learning libraries).

    ``x`` is ``[B, Cin, T]``, ``kernel`` is ``[Cout, Cin, k]`` with odd ``k``,
    ``bias`` is ``[Cout]``. Returns ``(out, x_padded)``.
    """
    x = check_tensor(x, 3, "conv1d input")
    kernel = check_tensor(kernel, 3, "conv1d kernel")
    c_out, c_in, k = kernel.shape
    check_axis(x.shape[1], c_in, 1, "conv1d input")
    if k % 2 != 1:
        raise ContractError(f"conv1d kernel size must be odd, got {k}")
    bias = np.asarray(bias)
    if bias.shape != (c_out,):
        raise ContractError(f"conv1d bias: expected shape ({c_out},), got {bias.shape}")

    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    windows = sliding_window_view(xp, k, axis=2)  # [B, Cin, T, k]
    out = np.tensordot(kernel, windows, axes=([1, 2], [1, 3])).transpose(1, 0, 2)
    out += bias[None, :, None]
    return out, xp


def conv1d_backward(grad, x_padded, kernel):
    """Return ``(d_input, d_kernel, d_bias)``."""
    k = kernel.shape[2]
    windows = sliding_window_view(x_padded, k, axis=2)
    d_kernel = np.tensordot(grad, windows, axes=([0, 2], [0, 2]))
    # input gradient = "same" correlation of grad with the transposed, flipped kernel
    d_input, _ = conv1d_forward(grad, kernel.transpose(1, 0, 2)[:, :, ::-1], np.zeros(kernel.shape[1], grad.dtype))
    d_bias = grad.sum(axis=(0, 2))
    return d_input, d_kernel, d_bias


def maxpool1d_forward(x, k=2):
    """Non-overlapping max pooling (stride == k). Returns ``(out, argmax)``."""
    x = check_tensor(x, 3, "maxpool1d input")
    b, c, t = x.shape
    if t % k:
        raise ContractError(f"maxpool1d: time axis has extent {t}, not divisible by {k}")
    windows = x.reshape(b, c, t // k, k)
    # np.argmax returns the first maximal index, which fixes the tie rule
    idx = windows.argmax(axis=3)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool1d_backward(grad, argmax, k=2):
    b, c, t_out = grad.shape
    d_windows = np.zeros((b, c, t_out, k), dtype=grad.dtype)
    np.put_along_axis(d_windows, argmax[..., None], grad[..., None], axis=3)
    return d_windows.reshape(b, c, t_out * k)


def upsample_nearest_forward(x, factor=2):
    x = check_tensor(x, 3, "upsample input")
    if int(factor) != factor or factor < 1:
        raise ContractError(f"upsample factor must be a positive integer, got {factor}")
    return np.repeat(x, int(factor), axis=2)


def upsample_nearest_backward(grad, factor=2):
    b, c, t = grad.shape
    return grad.reshape(b, c, t // factor, factor).sum(axis=3)


def avgpool1d_forward(x, k):
    x = check_tensor(x, 3, "avgpool1d input")
    b, c, t = x.shape
    if t % k:
        raise ContractError(f"avgpool1d: time axis has extent {t}, not divisible by {k}")
    return x.reshape(b, c, t // k, k).mean(axis=3)


def avgpool1d_backward(grad, k):
    return np.repeat(grad / k, k, axis=2)


def elu_forward(x):
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0)))


def elu_backward(grad, x):
    return grad * np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0))).astype(grad.dtype, copy=False)


def tanh_forward(x):
    return np.tanh(x)


def tanh_backward(grad, out):
    return grad * (1.0 - out * out)


def softmax_forward(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(grad, out, axis=-1):
    return out * (grad - (grad * out).sum(axis=axis, keepdims=True))


# convenience aliases for one-shot use
def conv1d(x, kernel, bias):
    return conv1d_forward(x, kernel, bias)[0]


def maxpool1d(x, k=2):
    return maxpool1d_forward(x, k)[0]


def upsample_nearest(x, factor=2):
    return upsample_nearest_forward(x, factor)


def avgpool1d(x, k):
    return avgpool1d_forward(x, k)


elu = elu_forward
tanh = tanh_forward
softmax = softmax_forward
