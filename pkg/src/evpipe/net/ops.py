"""Layer primitives with exact analytic gradients.

Convolution is cross-correlation (no kernel flip), NCHW layout throughout.
Kernel shapes: conv (out_ch, in_ch, kh, kw); transposed conv
(in_ch, out_ch, kh, kw). The transposed convolution is, by construction, the
adjoint of the strided convolution: scatter-add of kernel taps rather than
gather, which is also how the input gradient of conv2d is computed.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _patches(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Strided window view (n, c, kh, kw, oh, ow) over a padded input."""
    n, c, hp, wp = xp.shape
    sn, sc, sh, sw = xp.strides
    shape = (n, c, kh, kw, oh, ow)
    strides = (sn, sc, sh, sw, sh * stride, sw * stride)
    return np.lib.stride_tricks.as_strided(xp, shape, strides, writeable=False)


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _scatter_taps(src: np.ndarray, kernel: np.ndarray, stride: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add kernel taps: out[:, b, i + s*u, j + s*v] += src . kernel.

    src (n, a, h, w), kernel (a, b, kh, kw) -> out (n, b, oh, ow). Each tap
    (i, j) writes a disjoint strided slice, so ordinary += is safe.
    """
    n, a, h, w = src.shape
    _, b, kh, kw = kernel.shape
    out = np.zeros((n, b, oh, ow), src.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(src, kernel[:, :, i, j], axes=([1], [0]))
            out[:, :, i : i + stride * h : stride, j : j + stride * w : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return out


def _kernel_grad(src: np.ndarray, tgt_pad: np.ndarray, stride: int, kh: int, kw: int) -> np.ndarray:
    """d(kernel)[a, b, i, j] = sum_n,u,v src[n,a,u,v] * tgt_pad[n,b,u*s+i,v*s+j]."""
    n, a, oh, ow = src.shape
    pat = _patches(tgt_pad, kh, kw, stride, oh, ow)
    return np.tensordot(src, pat, axes=([0, 2, 3], [0, 4, 5]))


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Strided 2-D cross-correlation, x (n, c, h, w) -> (n, co, oh, ow)."""
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    if ci != c:
        raise DataError(f"conv kernel expects {ci} input channels, got {c}")
    oh = conv_out_size(h, kh, stride, padding)
    ow = conv_out_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise DataError(f"conv output would be empty for input {h}x{w}")
    xp = _pad_hw(x, padding)
    pat = _patches(xp, kh, kw, stride, oh, ow)
    y = np.matmul(kernel.reshape(co, -1), pat.reshape(n, c * kh * kw, oh * ow))
    y = y.reshape(n, co, oh, ow)
    if bias is not None:
        y += bias.reshape(1, -1, 1, 1)
    return y


def conv2d_backward(dy, x, kernel, stride: int = 1, padding: int = 0):
    """Gradients of conv2d: returns (dx, dkernel, dbias)."""
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    xp = _pad_hw(x, padding)
    dkernel = _kernel_grad(dy, xp, stride, kh, kw)
    dbias = dy.sum(axis=(0, 2, 3))
    hp, wp = xp.shape[2], xp.shape[3]
    dxp = _scatter_taps(dy, kernel, stride, hp, wp)
    if padding:
        dx = dxp[:, :, padding : padding + h, padding : padding + w]
    else:
        dx = dxp
    return np.ascontiguousarray(dx), dkernel, dbias


def conv_transpose2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> np.ndarray:
    """Transposed convolution (adjoint of conv2d), x (n, ci, h, w).

    Output spatial size: (h - 1)*stride - 2*padding + kh + output_padding.
    output_padding must be < stride; the extra rows/columns receive bias only.
    """
    n, ci, h, w = x.shape
    ci_k, co, kh, kw = kernel.shape
    if ci_k != ci:
        raise DataError(f"transposed kernel expects {ci_k} input channels, got {ci}")
    if not 0 <= output_padding < max(stride, 1):
        raise DataError(f"output_padding {output_padding} must lie in [0, stride)")
    oh = (h - 1) * stride - 2 * padding + kh + output_padding
    ow = (w - 1) * stride - 2 * padding + kw + output_padding
    if oh < 1 or ow < 1:
        raise DataError(f"transposed conv output would be empty for input {h}x{w}")
    full_h = max((h - 1) * stride + kh, padding + oh)
    full_w = max((w - 1) * stride + kw, padding + ow)
    buf = _scatter_taps(x, kernel, stride, full_h, full_w)
    y = np.ascontiguousarray(buf[:, :, padding : padding + oh, padding : padding + ow])
    if bias is not None:
        y += bias.reshape(1, -1, 1, 1)
    return y


def conv_transpose2d_backward(dy, x, kernel, stride: int = 1, padding: int = 0, output_padding: int = 0):
    """Gradients of conv_transpose2d: returns (dx, dkernel, dbias)."""
    n, ci, h, w = x.shape
    _, co, kh, kw = kernel.shape
    # Input gradient is a plain strided convolution of the output gradient.
    dx = conv2d(dy, kernel, None, stride=stride, padding=padding)
    dx = dx[:, :, :h, :w]
    dyp = _pad_hw(dy, padding)
    # Pad the tail so kernel windows at stride reach (h-1)*s + k.
    need_h = (h - 1) * stride + kh
    need_w = (w - 1) * stride + kw
    if dyp.shape[2] < need_h or dyp.shape[3] < need_w:
        dyp = np.pad(
            dyp,
            (
                (0, 0),
                (0, 0),
                (0, max(0, need_h - dyp.shape[2])),
                (0, max(0, need_w - dyp.shape[3])),
            ),
        )
    dkernel = _kernel_grad(x, dyp, stride, kh, kw)
    dbias = dy.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), dkernel, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def batch_norm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    update_stats: bool = False,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel batch normalization over (n, h, w). Returns (y, cache).

    Train mode normalizes by biased batch statistics; with update_stats the
    running buffers are updated in place (unbiased variance, torch style).
    Eval mode normalizes by the running statistics.
    """
    if mode not in ("train", "eval"):
        raise DataError(f"batch norm mode must be train or eval, got {mode!r}")
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        y = gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)
        return y, {"mode": mode}

    m = x.shape[0] * x.shape[2] * x.shape[3]
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    y = gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)
    if update_stats:
        var_u = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var_u
    cache = {"mode": mode, "xhat": xhat, "inv_std": inv_std, "gamma": gamma, "m": m}
    return y, cache


def batch_norm_backward(dy: np.ndarray, cache: dict):
    """Train-mode batch norm gradients: returns (dx, dgamma, dbeta)."""
    if cache["mode"] != "train":
        raise DataError("batch norm backward requires a train-mode cache")
    xhat = cache["xhat"]
    inv_std = cache["inv_std"]
    gamma = cache["gamma"]
    m = cache["m"]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma.reshape(1, -1, 1, 1)
    mean_dxhat = dxhat.mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    dx = inv_std.reshape(1, -1, 1, 1) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta
