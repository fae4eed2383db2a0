"""Recurrent reconstruction UNet: config, weights, forward and backward.

Input is the voxel grid stacked with K previous reconstructions. Strided
conv encoders double channels, residual blocks sit at the bottleneck, and
transposed-conv decoders halve channels with concatenation skips from the
symmetric encoders. A 1x1 conv plus sigmoid produces the image. Height and
width are reflect-padded up to a multiple of 2^num_encoders and the output
is cropped back, so arbitrary sensor sizes pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .ops import (
    batch_norm_backward,
    batch_norm_forward,
    conv2d,
    conv2d_backward,
    conv_transpose2d,
    conv_transpose2d_backward,
    relu,
    sigmoid,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class NetConfig:
    bins: int = 10
    recurrent_frames: int = 3
    base_channels: int = 64
    num_encoders: int = 4
    num_residual: int = 2
    enc_kernel: int = 5
    res_kernel: int = 3

    def __post_init__(self):
        if self.bins < 1 or self.recurrent_frames < 0:
            raise DataError("bins must be >= 1 and recurrent_frames >= 0")
        if self.num_encoders < 1 or self.num_residual < 0:
            raise DataError("need at least one encoder and num_residual >= 0")
        if self.base_channels < 2 or self.base_channels % 2:
            raise DataError("base_channels must be even and >= 2")
        if self.enc_kernel % 2 == 0 or self.res_kernel % 2 == 0:
            raise DataError("kernel sizes must be odd")

    @property
    def in_channels(self) -> int:
        return self.bins + self.recurrent_frames

    def encoder_channels(self, i: int) -> int:
        return self.base_channels << i

    def decoder_channels(self, i: int) -> int:
        # 256, 128, 64, 32 for the paper-scale config: halves from
        # base * 2^(n-2) down to base / 2.
        e = self.num_encoders - 2 - i
        return self.base_channels << e if e >= 0 else self.base_channels >> -e

    @property
    def multiple(self) -> int:
        return 1 << self.num_encoders

    @classmethod
    def tiny(cls, bins: int = 5, recurrent_frames: int = 2) -> "NetConfig":
        """Small configuration used by gradient checks and desk-scale training."""
        return cls(
            bins=bins,
            recurrent_frames=recurrent_frames,
            base_channels=8,
            num_encoders=2,
            num_residual=1,
        )


@dataclass
class NetworkWeights:
    """Trainable parameters plus batch-norm running statistics."""

    config: NetConfig
    params: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(int(np.prod(v.shape)) for v in self.params.values())

    def astype(self, dtype) -> "NetworkWeights":
        return NetworkWeights(
            self.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.stats.items()},
        )


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def make_residual_block(rng, channels: int, kernel: int, dtype=np.float32):
    """Parameter and stat dicts (local keys) for one residual block."""
    k = kernel
    params = {}
    stats = {}
    for tag in ("1", "2"):
        params[f"conv{tag}.w"] = _kaiming_uniform(
            rng, (channels, channels, k, k), channels * k * k, dtype
        )
        params[f"conv{tag}.b"] = np.zeros(channels, dtype)
        params[f"bn{tag}.gamma"] = np.ones(channels, dtype)
        params[f"bn{tag}.beta"] = np.zeros(channels, dtype)
        stats[f"bn{tag}.mean"] = np.zeros(channels, dtype)
        stats[f"bn{tag}.var"] = np.ones(channels, dtype)
    return params, stats


def init_weights(config: NetConfig, seed=0, dtype=np.float32) -> NetworkWeights:
    """Kaiming-uniform kernels (fan-in), zero biases, identity batch norm."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params, stats = {}, {}
    k = config.enc_kernel

    c_in = config.in_channels
    for i in range(config.num_encoders):
        c_out = config.encoder_channels(i)
        params[f"enc{i}.w"] = _kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
        params[f"enc{i}.b"] = np.zeros(c_out, dtype)
        c_in = c_out

    for j in range(config.num_residual):
        bp, bs = make_residual_block(rng, c_in, config.res_kernel, dtype)
        params.update({f"res{j}.{key}": v for key, v in bp.items()})
        stats.update({f"res{j}.{key}": v for key, v in bs.items()})

    for i in range(config.num_encoders):
        c_out = config.decoder_channels(i)
        params[f"dec{i}.w"] = _kaiming_uniform(rng, (c_in, c_out, k, k), c_in * k * k, dtype)
        params[f"dec{i}.b"] = np.zeros(c_out, dtype)
        if i < config.num_encoders - 1:
            c_in = c_out + config.encoder_channels(config.num_encoders - 2 - i)
        else:
            c_in = c_out

    params["head.w"] = _kaiming_uniform(rng, (1, c_in, 1, 1), c_in, dtype)
    params["head.b"] = np.zeros(1, dtype)
    return NetworkWeights(config, params, stats)


def _subdict(d: dict, prefix: str) -> dict:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in d.items() if k.startswith(prefix + ".")}


def residual_forward(x, params: dict, stats: dict, mode: str = "train", update_stats: bool = False, kernel: int = 3):
    """x + f(x) with f = conv-BN-ReLU-conv-BN, then ReLU on the sum."""
    pad = (kernel - 1) // 2
    c1 = conv2d(x, params["conv1.w"], params["conv1.b"], 1, pad)
    n1, bc1 = batch_norm_forward(
        c1, params["bn1.gamma"], params["bn1.beta"], stats["bn1.mean"], stats["bn1.var"],
        mode, update_stats, BN_MOMENTUM, BN_EPS,
    )
    a1 = relu(n1)
    c2 = conv2d(a1, params["conv2.w"], params["conv2.b"], 1, pad)
    n2, bc2 = batch_norm_forward(
        c2, params["bn2.gamma"], params["bn2.beta"], stats["bn2.mean"], stats["bn2.var"],
        mode, update_stats, BN_MOMENTUM, BN_EPS,
    )
    s = x + n2
    out = relu(s)
    cache = {
        "x": x,
        "bn1": bc1,
        "mask1": n1 > 0,
        "a1": a1,
        "bn2": bc2,
        "mask_out": s > 0,
        "kernel": kernel,
    }
    return out, cache


def residual_backward(dy, params: dict, cache: dict):
    """Returns (dx, grads) with grads keyed like the local param dict."""
    pad = (cache["kernel"] - 1) // 2
    ds = dy * cache["mask_out"]
    dn2, dg2, dbeta2 = batch_norm_backward(ds, cache["bn2"])
    da1, dw2, db2 = conv2d_backward(dn2, cache["a1"], params["conv2.w"], 1, pad)
    dn1 = da1 * cache["mask1"]
    dc1, dg1, dbeta1 = batch_norm_backward(dn1, cache["bn1"])
    dx, dw1, db1 = conv2d_backward(dc1, cache["x"], params["conv1.w"], 1, pad)
    dx = dx + ds
    grads = {
        "conv1.w": dw1,
        "conv1.b": db1,
        "bn1.gamma": dg1,
        "bn1.beta": dbeta1,
        "conv2.w": dw2,
        "conv2.b": db2,
        "bn2.gamma": dg2,
        "bn2.beta": dbeta2,
    }
    return dx, grads


def _pad_to_multiple(x, multiple):
    h, w = x.shape[2], x.shape[3]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (0, 0)
    if ph > h - 1 or pw > w - 1:
        raise DataError(
            f"input {h}x{w} too small to reflect-pad to a multiple of {multiple}"
        )
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect"), (ph, pw)


def _fold_reflect(dxp, h, w, ph, pw):
    """Adjoint of bottom/right reflect padding: fold gradients back."""
    # Columns first (reflection was applied per axis independently).
    dcols = dxp[:, :, :, :w].copy()
    for j in range(pw):
        dcols[:, :, :, w - 2 - j] += dxp[:, :, :, w + j]
    dx = dcols[:, :, :h, :].copy()
    for i in range(ph):
        dx[:, :, h - 2 - i, :] += dcols[:, :, h + i, :]
    return dx


def unet_forward(weights: NetworkWeights, x: np.ndarray, mode: str = "train", update_stats: bool = False):
    """Forward pass. x is (n, bins + K, h, w); returns (y, cache), y in (0, 1)."""
    cfg = weights.config
    p = weights.params
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise DataError(
            f"network input must be (n, {cfg.in_channels}, h, w), got {x.shape}"
        )
    h, w = x.shape[2], x.shape[3]
    xp, (ph, pw) = _pad_to_multiple(x, cfg.multiple)

    k = cfg.enc_kernel
    pad = (k - 1) // 2
    enc_cache = []
    enc_out = []
    cur = xp
    for i in range(cfg.num_encoders):
        pre = conv2d(cur, p[f"enc{i}.w"], p[f"enc{i}.b"], 2, pad)
        out = relu(pre)
        enc_cache.append({"x": cur, "mask": pre > 0})
        enc_out.append(out)
        cur = out

    res_cache = []
    for j in range(cfg.num_residual):
        cur, rc = residual_forward(
            cur, _subdict(p, f"res{j}"), _subdict(weights.stats, f"res{j}"),
            mode, update_stats, cfg.res_kernel,
        )
        res_cache.append(rc)

    dec_cache = []
    for i in range(cfg.num_encoders):
        pre = conv_transpose2d(cur, p[f"dec{i}.w"], p[f"dec{i}.b"], 2, pad, 1)
        out = relu(pre)
        dec_cache.append({"x": cur, "mask": pre > 0})
        if i < cfg.num_encoders - 1:
            cur = np.concatenate([out, enc_out[cfg.num_encoders - 2 - i]], axis=1)
        else:
            cur = out

    z = conv2d(cur, p["head.w"], p["head.b"], 1, 0)
    y_pad = sigmoid(z)
    y = np.ascontiguousarray(y_pad[:, :, :h, :w])
    cache = {
        "shape": (h, w, ph, pw),
        "enc": enc_cache,
        "res": res_cache,
        "dec": dec_cache,
        "head_in": cur,
        "y_pad": y_pad,
        "mode": mode,
    }
    return y, cache


def unet_backward(weights: NetworkWeights, cache: dict, dy: np.ndarray):
    """Backward pass. dy matches the forward output; returns (grads, dx).

    dx covers every input channel, including the recurrent frame planes,
    which is what lets training backpropagate through recycled predictions.
    """
    cfg = weights.config
    p = weights.params
    h, w, ph, pw = cache["shape"]
    y_pad = cache["y_pad"]

    dz = np.zeros_like(y_pad)
    dz[:, :, :h, :w] = dy
    dz *= y_pad * (1.0 - y_pad)

    grads = {}
    k = cfg.enc_kernel
    pad = (k - 1) // 2

    g, grads["head.w"], grads["head.b"] = conv2d_backward(dz, cache["head_in"], p["head.w"], 1, 0)

    denc = [None] * cfg.num_encoders
    for i in reversed(range(cfg.num_encoders)):
        dc = cache["dec"][i]
        if i < cfg.num_encoders - 1:
            co = cfg.decoder_channels(i)
            skip_idx = cfg.num_encoders - 2 - i
            dskip = g[:, co:]
            denc[skip_idx] = dskip if denc[skip_idx] is None else denc[skip_idx] + dskip
            g = g[:, :co]
        g = g * dc["mask"]
        g, grads[f"dec{i}.w"], grads[f"dec{i}.b"] = conv_transpose2d_backward(
            g, dc["x"], p[f"dec{i}.w"], 2, pad, 1
        )

    for j in reversed(range(cfg.num_residual)):
        g, rg = residual_backward(g, _subdict(p, f"res{j}"), cache["res"][j])
        grads.update({f"res{j}.{key}": v for key, v in rg.items()})

    last = cfg.num_encoders - 1
    denc[last] = g if denc[last] is None else denc[last] + g
    for i in reversed(range(cfg.num_encoders)):
        ec = cache["enc"][i]
        g = denc[i] * ec["mask"]
        g, grads[f"enc{i}.w"], grads[f"enc{i}.b"] = conv2d_backward(g, ec["x"], p[f"enc{i}.w"], 2, pad)
        if i > 0:
            denc[i - 1] = g if denc[i - 1] is None else denc[i - 1] + g

    dx = _fold_reflect(g, h, w, ph, pw) if (ph or pw) else g
    return grads, dx
