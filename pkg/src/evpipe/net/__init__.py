"""Hand-written numpy network stack: layers, UNet, loss, optimizer, training.

Every layer carries an exact analytic backward pass; the test suite holds
them against central finite differences and adjoint identities, so nothing
here may delegate gradient computation to an autodiff framework.
"""

from .ops import (
    batch_norm_backward,
    batch_norm_forward,
    conv2d,
    conv2d_backward,
    conv_transpose2d,
    conv_transpose2d_backward,
    conv_out_size,
    relu,
    sigmoid,
)
from .unet import (
    NetConfig,
    NetworkWeights,
    init_weights,
    make_residual_block,
    residual_backward,
    residual_forward,
    unet_backward,
    unet_forward,
)
from .loss import recon_loss
from .train import TrainConfig, TrainResult, adam_init, adam_step, decayed_rate, train
from .weights_io import load_weights, save_weights

__all__ = [
    "NetConfig",
    "NetworkWeights",
    "TrainConfig",
    "TrainResult",
    "adam_init",
    "adam_step",
    "batch_norm_backward",
    "batch_norm_forward",
    "conv2d",
    "conv2d_backward",
    "conv_out_size",
    "conv_transpose2d",
    "conv_transpose2d_backward",
    "decayed_rate",
    "init_weights",
    "load_weights",
    "make_residual_block",
    "recon_loss",
    "relu",
    "residual_backward",
    "residual_forward",
    "save_weights",
    "sigmoid",
    "train",
    "unet_backward",
    "unet_forward",
]
