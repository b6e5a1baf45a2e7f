"""Dense tensor ops for the segmentation net: each op has a forward pass and
an analytic backward pass.

Tensors are plain numpy arrays in batch x channels x height x width layout
(row-major).  Training and gradient checking run in float64; inference may
narrow to float32 upstream.  Ops are pure functions of their arguments: they
never mutate inputs, and batch-norm running statistics are threaded through
explicitly as state values.

Conventions fixed here:
  * convolution is cross-correlation (no kernel flip), symmetric zero padding
  * max-pool ties break on the first (row-major) window index
  * any NaN/Inf produced by an op raises NonFiniteError instead of propagating
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand dimensions are inconsistent with the op's contract."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


def ensure_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"{name} produced non-finite values")


@dataclass
class LayerGrads:
    """Gradients of a scalar readout w.r.t. an op's input and parameters.

    grad_input matches the op input's dims; each grad_params entry matches the
    dims of the parameter it differentiates.
    """

    grad_input: np.ndarray
    grad_params: dict = field(default_factory=dict)


def _check_nchw(name, x):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (NCHW), got {x.ndim}-d")


def conv2d_output_hw(h, w, kh, kw, stride, padding):
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"convolution output would be empty for input {h}x{w}, "
                         f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    return oh, ow


def _conv_windows(x, kh, kw, stride, padding):
    # (B, C, OH, OW, kh, kw) view of the zero-padded input
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, kernel, bias, stride=1, padding=0):
    """Cross-correlation with symmetric zero padding.

    x: (B, Cin, H, W); kernel: (Cout, Cin, kh, kw); bias: (Cout,).
    Output spatial dims follow floor((H + 2*padding - kh)/stride) + 1.
    """
    _check_nchw("conv2d input", x)
    if kernel.ndim != 4:
        raise ShapeError("conv2d kernel must be 4-d (Cout, Cin, kh, kw)")
    if stride <= 0:
        raise ShapeError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be non-negative, got {padding}")
    cout, cin, kh, kw = kernel.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    conv2d_output_hw(x.shape[2], x.shape[3], kh, kw, stride, padding)

    win = _conv_windows(x, kh, kw, stride, padding)
    # contract over (Cin, kh, kw); tensordot lowers to a BLAS matmul
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]
    ensure_finite("conv2d", out)
    return out


def conv2d_backward(x, kernel, grad_output, stride=1, padding=0):
    """Gradients of conv2d w.r.t. input, kernel and bias."""
    _check_nchw("conv2d input", x)
    cout, cin, kh, kw = kernel.shape
    oh, ow = conv2d_output_hw(x.shape[2], x.shape[3], kh, kw, stride, padding)
    if grad_output.shape != (x.shape[0], cout, oh, ow):
        raise ShapeError(f"grad_output shape {grad_output.shape} does not match "
                         f"conv2d output {(x.shape[0], cout, oh, ow)}")

    grad_bias = grad_output.sum(axis=(0, 2, 3))

    win = _conv_windows(x, kh, kw, stride, padding)
    # (Cout, Cin, kh, kw) <- sum over batch and output positions
    grad_kernel = np.tensordot(grad_output, win, axes=([0, 2, 3], [0, 2, 3]))

    # scatter grad_output * kernel taps back onto the padded input grid
    b, _, h, w = x.shape
    gpad = np.zeros((b, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    taps = np.tensordot(grad_output, kernel, axes=([1], [0]))  # (B, OH, OW, Cin, kh, kw)
    taps = taps.transpose(0, 3, 1, 2, 4, 5)  # (B, Cin, OH, OW, kh, kw)
    for i in range(kh):
        for j in range(kw):
            gpad[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += taps[..., i, j]
    grad_input = gpad[:, :, padding:padding + h, padding:padding + w]

    ensure_finite("conv2d_backward", grad_input, grad_kernel, grad_bias)
    return LayerGrads(grad_input, {"kernel": grad_kernel, "bias": grad_bias})


def upconv2d(x, kernel, bias, stride=2):
    """Transposed convolution; the adjoint of conv2d with the same geometry.

    x: (B, Cin, H, W); kernel: (Cin, Cout, kh, kw); bias: (Cout,).
    Output spatial dims are (H - 1) * stride + kh.
    """
    _check_nchw("upconv2d input", x)
    if stride <= 0:
        raise ShapeError(f"stride must be positive, got {stride}")
    cin, cout, kh, kw = kernel.shape
    if x.shape[1] != cin:
        raise ShapeError(f"upconv2d input has {x.shape[1]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"upconv2d bias must have shape ({cout},), got {bias.shape}")

    b, _, h, w = x.shape
    oh = (h - 1) * stride + kh
    ow = (w - 1) * stride + kw
    out = np.zeros((b, cout, oh, ow), dtype=x.dtype)
    taps = np.tensordot(x, kernel, axes=([1], [0]))  # (B, H, W, Cout, kh, kw)
    taps = taps.transpose(0, 3, 1, 2, 4, 5)  # (B, Cout, H, W, kh, kw)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * h:stride, j:j + stride * w:stride] += taps[..., i, j]
    out += bias[None, :, None, None]
    ensure_finite("upconv2d", out)
    return out


def upconv2d_backward(x, kernel, grad_output, stride=2):
    """Gradients of upconv2d w.r.t. input, kernel and bias."""
    _check_nchw("upconv2d input", x)
    cin, cout, kh, kw = kernel.shape
    b, _, h, w = x.shape
    oh = (h - 1) * stride + kh
    ow = (w - 1) * stride + kw
    if grad_output.shape != (b, cout, oh, ow):
        raise ShapeError(f"grad_output shape {grad_output.shape} does not match "
                         f"upconv2d output {(b, cout, oh, ow)}")

    grad_bias = grad_output.sum(axis=(0, 2, 3))
    gwin = _conv_windows(grad_output, kh, kw, stride, 0)  # (B, Cout, H, W, kh, kw)
    grad_input = np.tensordot(gwin, kernel, axes=([1, 4, 5], [1, 2, 3]))
    grad_input = np.ascontiguousarray(grad_input.transpose(0, 3, 1, 2))
    grad_kernel = np.tensordot(x, gwin, axes=([0, 2, 3], [0, 2, 3]))

    ensure_finite("upconv2d_backward", grad_input, grad_kernel, grad_bias)
    return LayerGrads(grad_input, {"kernel": grad_kernel, "bias": grad_bias})


def maxpool2d(x, window=2):
    """Non-overlapping max pooling.  Returns (output, argmax_indices); the
    indices address the flattened (row-major) window position and route the
    backward pass.  Spatial dims must be divisible by window."""
    _check_nchw("maxpool2d input", x)
    if window <= 0:
        raise ShapeError(f"window must be positive, got {window}")
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"maxpool2d input {h}x{w} not divisible by window {window}")
    hb, wb = h // window, w // window
    tiles = x.reshape(b, c, hb, window, wb, window).transpose(0, 1, 2, 4, 3, 5)
    tiles = tiles.reshape(b, c, hb, wb, window * window)
    idx = tiles.argmax(axis=-1)  # first max wins on ties
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    ensure_finite("maxpool2d", out)
    return out, idx


def maxpool2d_backward(grad_output, argmax, input_shape, window=2):
    """Routes grad_output entries to the argmax position of each window."""
    b, c, h, w = input_shape
    hb, wb = h // window, w // window
    if grad_output.shape != (b, c, hb, wb):
        raise ShapeError(f"grad_output shape {grad_output.shape} does not match "
                         f"pooled dims {(b, c, hb, wb)}")
    tiles = np.zeros((b, c, hb, wb, window * window), dtype=grad_output.dtype)
    np.put_along_axis(tiles, argmax[..., None], grad_output[..., None], axis=-1)
    grad_input = tiles.reshape(b, c, hb, wb, window, window) \
                      .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
    ensure_finite("maxpool2d_backward", grad_input)
    return grad_input


@dataclass
class BatchNormState:
    """Per-channel running statistics; batches_seen == 0 means uninitialized."""

    running_mean: np.ndarray
    running_var: np.ndarray
    batches_seen: int = 0

    @staticmethod
    def initial(channels, dtype=np.float64):
        return BatchNormState(np.zeros(channels, dtype=dtype),
                              np.ones(channels, dtype=dtype), 0)

    def copy(self):
        return BatchNormState(self.running_mean.copy(), self.running_var.copy(),
                              self.batches_seen)


def batchnorm2d(x, gamma, beta, state, mode="train", momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    Train mode normalizes with batch statistics over (B, H, W), returns the
    updated running state; eval mode uses the running statistics unchanged.
    Variance is the biased (1/N) estimate throughout.

    Returns (output, cache, new_state); cache feeds batchnorm2d_backward and is
    None in eval mode.
    """
    _check_nchw("batchnorm2d input", x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    if eps <= 0:
        raise ShapeError(f"eps must be positive, got {eps}")

    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
        out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
        new_state = BatchNormState(
            (1.0 - momentum) * state.running_mean + momentum * mean,
            (1.0 - momentum) * state.running_var + momentum * var,
            state.batches_seen + 1)
        cache = (xhat, invstd, gamma)
    elif mode == "eval":
        if state.batches_seen == 0:
            raise ValueError("batchnorm2d eval mode with uninitialized running stats")
        invstd = 1.0 / np.sqrt(state.running_var + eps)
        out = gamma[None, :, None, None] * (x - state.running_mean[None, :, None, None]) \
            * invstd[None, :, None, None] + beta[None, :, None, None]
        new_state = state
        cache = None
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    ensure_finite("batchnorm2d", out)
    return out, cache, new_state


def batchnorm2d_backward(grad_output, cache):
    """Gradients of train-mode batchnorm2d w.r.t. input, gamma and beta."""
    xhat, invstd, gamma = cache
    n = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    grad_beta = grad_output.sum(axis=(0, 2, 3))
    grad_gamma = (grad_output * xhat).sum(axis=(0, 2, 3))
    gxhat = grad_output * gamma[None, :, None, None]
    grad_input = (invstd[None, :, None, None] / n) * (
        n * gxhat
        - gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
    ensure_finite("batchnorm2d_backward", grad_input, grad_gamma, grad_beta)
    return LayerGrads(grad_input, {"gamma": grad_gamma, "beta": grad_beta})


def relu(x):
    out = np.maximum(x, 0.0)
    ensure_finite("relu", out)
    return out


def relu_backward(x, grad_output):
    return np.where(x > 0.0, grad_output, 0.0)


def softmax_channels(x):
    """Softmax over the channel axis, per pixel.  Channels sum to 1."""
    _check_nchw("softmax input", x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)
    ensure_finite("softmax_channels", out)
    return out


def concat_channels(a, b):
    """Concatenates two tensors along the channel axis."""
    _check_nchw("concat input a", a)
    _check_nchw("concat input b", b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels requires equal batch/spatial dims, "
                         f"got {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(grad_output, ca):
    """Backward of concat_channels: splits the gradient at channel ca."""
    return grad_output[:, :ca], grad_output[:, ca:]
