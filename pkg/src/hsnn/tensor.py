"""Dense layer primitives with hand-written forward and backward passes.

Tensors are plain ``numpy.ndarray`` objects. The public conv/pool functions
take NCHW tensors; the ``*_nhwc`` kernels they wrap are what the network
layers call. Every backward function returns exact gradients of its forward
map, checked in the tests against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class DimensionError(ValueError):
    """Raised when tensor shapes do not compose."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) so a seed alone fixes the stream."""
    return np.random.Generator(np.random.Philox(int(seed)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _window(i: int, n: int, stride: int) -> slice:
    return slice(i, i + stride * (n - 1) + 1, stride)


# Layers keep activations channels-last (B,H,W,C) internally so that unfolded
# patches and matmul outputs need no transposes; the NCHW functions further
# down are thin wrappers exposing the usual layout.

def im2col_nhwc(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold ``x`` (B,H,W,C) into rows of shape (B*H'*W', k*k*C)."""
    b, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = x[:, _window(i, ho, stride), _window(j, wo, stride), :]
    return cols.reshape(b * ho * wo, k * k * c)


def col2im_nhwc(cols: np.ndarray, x_shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col_nhwc`: scatter-add rows back onto the grid."""
    b, h, w, c = x_shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    cols = cols.reshape(b, ho, wo, k, k, c)
    out = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, _window(i, ho, stride), _window(j, wo, stride), :] += cols[:, :, :, i, j, :]
    if pad:
        out = out[:, pad:-pad, pad:-pad, :]
    return out


def _check_conv(x_shape, w_shape, stride: int, pad: int) -> None:
    """``x_shape`` is (B,C,H,W); ``w_shape`` is (O,C,k,k)."""
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise DimensionError(f"conv expects 4-D input and kernel, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise DimensionError(f"input has {x_shape[1]} channels, kernel expects {w_shape[1]}")
    if w_shape[2] != w_shape[3]:
        raise DimensionError("only square kernels are supported")
    if pad < 0:
        raise ValueError("negative padding")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    k = w_shape[2]
    if k > x_shape[2] + 2 * pad or k > x_shape[3] + 2 * pad:
        raise DimensionError(f"kernel {k} larger than padded input {x_shape[2:]}")


def _nchw_shape(x_nhwc_shape):
    b, h, w, c = x_nhwc_shape
    return (b, c, h, w)


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    # (O,C,k,k) -> (O, k*k*C) matching the im2col_nhwc column order
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def conv2d_forward_nhwc(x, w, bias, stride=1, pad=0):
    """Channels-last convolution; returns ``(y, cols)`` with ``y`` (B,H',W',O)."""
    _check_conv(_nchw_shape(x.shape), w.shape, stride, pad)
    b, h, wd, _ = x.shape
    o, _, k, _ = w.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    cols = im2col_nhwc(x, k, stride, pad)
    y = cols @ _kernel_matrix(w).T
    if bias is not None:
        y += bias
    return y.reshape(b, ho, wo, o), cols


def conv2d_backward_nhwc(grad_y, x_shape, w, stride=1, pad=0, cols=None, x=None, need_grad_x=True):
    o, _, k, _ = w.shape
    b, h, wd, _ = x_shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    if grad_y.shape != (b, ho, wo, o):
        raise DimensionError(f"grad_y has shape {grad_y.shape}, expected {(b, ho, wo, o)}")
    if cols is None:
        cols = im2col_nhwc(x, k, stride, pad)
    g = grad_y.reshape(-1, o)
    kk_c = (g.T @ cols).reshape(o, k, k, -1)
    grad_w = np.ascontiguousarray(kk_c.transpose(0, 3, 1, 2))
    grad_b = g.sum(axis=0)
    grad_x = None
    if need_grad_x:
        grad_x = col2im_nhwc(g @ _kernel_matrix(w), x_shape, k, stride, pad)
    return grad_x, grad_w, grad_b


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Zero-padded cross-correlation. ``x``: (B,C,H,W), ``w``: (O,C,k,k) -> (B,O,H',W')."""
    _check_conv(x.shape, w.shape, stride, pad)
    y, _ = conv2d_forward_nhwc(x.transpose(0, 2, 3, 1), w, bias, stride, pad)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward(grad_y, x, w, stride=1, pad=0):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernel and bias."""
    _check_conv(x.shape, w.shape, stride, pad)
    xl = x.transpose(0, 2, 3, 1)
    gx, gw, gb = conv2d_backward_nhwc(grad_y.transpose(0, 2, 3, 1), xl.shape, w, stride, pad, x=xl)
    return np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), gw, gb


def maxpool2d_nhwc(x: np.ndarray, k: int, s: int):
    """Window maxima over axes 1,2 of (B,H,W,C) and each winner's in-window
    index (row-major); ties keep the first index."""
    if k < 1 or s < 1:
        raise ValueError("pool size and stride must be >= 1")
    if x.ndim != 4:
        raise DimensionError(f"maxpool expects a 4-D tensor, got {x.shape}")
    b, h, w, c = x.shape
    if k > h or k > w:
        raise DimensionError(f"pool window {k} larger than input {h}x{w}")
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    y = x[:, _window(0, ho, s), _window(0, wo, s), :].copy()
    idx = np.zeros(y.shape, dtype=np.int16)
    for pos in range(1, k * k):
        i, j = divmod(pos, k)
        v = x[:, _window(i, ho, s), _window(j, wo, s), :]
        better = v > y
        np.copyto(y, v, where=better)
        idx[better] = pos
    return y, idx


def maxpool2d_backward_nhwc(grad_y, argmax, input_shape, k: int, s: int):
    grad_x = np.zeros(input_shape, dtype=grad_y.dtype)
    ho, wo = argmax.shape[1], argmax.shape[2]
    for pos in range(k * k):
        i, j = divmod(pos, k)
        grad_x[:, _window(i, ho, s), _window(j, wo, s), :] += np.where(argmax == pos, grad_y, 0)
    return grad_x


def maxpool2d(x: np.ndarray, k: int, s: int):
    """NCHW max pooling; returns ``(y, argmax)`` with argmax the flat
    row-major index of the winner inside its window (first index on ties)."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool expects (B,C,H,W), got {x.shape}")
    y, idx = maxpool2d_nhwc(x.transpose(0, 2, 3, 1), k, s)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), np.ascontiguousarray(idx.transpose(0, 3, 1, 2))


def maxpool2d_backward(grad_y: np.ndarray, argmax: np.ndarray, input_shape, k: int, s: int):
    b, c, h, w = input_shape
    gx = maxpool2d_backward_nhwc(grad_y.transpose(0, 2, 3, 1), argmax.transpose(0, 2, 3, 1), (b, h, w, c), k, s)
    return np.ascontiguousarray(gx.transpose(0, 3, 1, 2))


@dataclass
class BNCache:
    phase: str
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    channel_axis: int


def _other_axes(ndim: int, channel_axis: int) -> tuple:
    if ndim < 2:
        raise DimensionError("batchnorm needs a channel axis")
    ca = channel_axis % ndim
    return tuple(a for a in range(ndim) if a != ca)


def _per_channel(v: np.ndarray, ndim: int, channel_axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[channel_axis % ndim] = -1
    return v.reshape(shape)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, phase="train",
                      momentum=BN_MOMENTUM, eps=BN_EPS, track=True, channel_axis=1):
    """Per-channel batch normalization.

    In the train phase the batch statistics normalize ``x`` and, when
    ``track`` is set, ``running_mean``/``running_var`` are updated in place
    as ``new = momentum*batch + (1-momentum)*old`` (unbiased batch variance,
    as in the common frameworks). The infer phase uses the running values.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.shape[0] == 0:
        raise DimensionError("batch size is zero")
    axes = _other_axes(x.ndim, channel_axis)
    if phase == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if track:
            n = x.size // x.shape[channel_axis]
            unbiased = var * n / max(n - 1, 1)
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    elif phase == "infer":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown phase {phase!r}")
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    pc = lambda v: _per_channel(v, x.ndim, channel_axis)  # noqa: E731
    x_hat = (x - pc(mean).astype(x.dtype)) * pc(inv_std)
    y = x_hat * pc(gamma) + pc(beta)
    return y.astype(x.dtype, copy=False), BNCache(phase, x_hat, inv_std, gamma, channel_axis)


def batchnorm_backward(grad_y: np.ndarray, cache: BNCache):
    if cache.phase != "train":
        raise ValueError("batchnorm_backward needs a train-phase cache")
    ca = cache.channel_axis
    axes = _other_axes(grad_y.ndim, ca)
    pc = lambda v: _per_channel(v, grad_y.ndim, ca)  # noqa: E731
    n = grad_y.size // grad_y.shape[ca]
    grad_beta = grad_y.sum(axis=axes)
    grad_gamma = (grad_y * cache.x_hat).sum(axis=axes)
    g_hat = grad_y * pc(cache.gamma)
    sum_g = pc(g_hat.sum(axis=axes))
    sum_gx = pc((g_hat * cache.x_hat).sum(axis=axes))
    grad_x = pc(cache.inv_std) / n * (n * g_hat - sum_g - cache.x_hat * sum_gx)
    return grad_x.astype(grad_y.dtype, copy=False), grad_gamma, grad_beta


def kaiming_uniform_init(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Uniform samples in +-sqrt(6 / fan_in)."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
