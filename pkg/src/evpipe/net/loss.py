"""Reconstruction loss: mean absolute error plus an SSIM penalty.

d(x, y) = mean|x - y| + weight * (1 - SSIM(x, y)), with the exact analytic
gradient with respect to x. The SSIM term reuses the windowed statistics
from the metrics module; its gradient backpropagates through every blur via
the adjoint (full-mode) convolution.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..metrics import blur_valid_adjoint, ssim_parts

SSIM_WEIGHT = 0.5


def ssim_with_grad(x: np.ndarray, y: np.ndarray, data_range: float = 1.0):
    """Mean SSIM and its gradient with respect to x (y held constant)."""
    parts = ssim_parts(x, y, data_range)
    smap = parts["map"]
    n_map = smap.size
    g = parts["g"]
    ux, uy = parts["ux"], parts["uy"]
    a1, a2, b1, b2 = parts["a1"], parts["a2"], parts["b1"], parts["b2"]

    # d(mean)/d(map) spread uniformly, then chain through the quotient.
    ds = 1.0 / n_map
    inv_b = 1.0 / (b1 * b2)
    da1 = ds * a2 * inv_b
    da2 = ds * a1 * inv_b
    db1 = -ds * smap / b1
    db2 = -ds * smap / b2

    dux = 2.0 * uy * da1 + 2.0 * ux * db1 - 2.0 * ux * db2 - uy * (2.0 * da2)
    dp = db2  # sxx = blur(x*x) - ux^2
    dq = 2.0 * da2  # sxy = blur(x*y) - ux*uy

    dx = blur_valid_adjoint(dux, g)
    dx += blur_valid_adjoint(dp, g) * (2.0 * parts["x"])
    dx += blur_valid_adjoint(dq, g) * parts["y"]
    return float(np.mean(smap)), dx


def recon_loss(pred: np.ndarray, target: np.ndarray, ssim_weight: float = SSIM_WEIGHT):
    """Loss value and d(loss)/d(pred). Shapes (h, w) or (n, h, w)."""
    pred = np.asarray(pred, np.float64)
    target = np.asarray(target, np.float64)
    if pred.shape != target.shape:
        raise DataError(f"loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    l1 = float(np.mean(np.abs(diff)))
    dl1 = np.sign(diff) / diff.size
    s, ds = ssim_with_grad(pred, target)
    loss = l1 + ssim_weight * (1.0 - s)
    grad = dl1 - ssim_weight * ds
    return loss, grad
