"""ADAM and the unrolled recurrent training loop.

Each sample is a run of L consecutive event windows from one sequence. The
network is unrolled over the run; every prediction is fed back as a
recurrent input plane for the next K steps, and the backward pass routes
gradients through those recycled frames as well as through the per-step
loss (full backpropagation through time).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericError
from ..events import read_events_bin, window_by_count
from ..frames import read_video_dir
from ..simulate import load_manifest
from ..voxel import voxelize
from .loss import recon_loss
from .unet import NetConfig, NetworkWeights, init_weights, unet_backward, unet_forward
from .weights_io import save_weights


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-4
    lr_decay: float = 0.9
    lr_decay_every: int = 10
    unroll: int = 8
    window: int = 25000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ssim_weight: float = 0.5
    max_chunks_per_seq: int = 0  # 0 = use every complete run of `unroll` windows
    checkpoint_every: int = 0  # epochs; 0 disables


@dataclass
class TrainResult:
    weights: NetworkWeights
    epoch_losses: list
    n_samples: int
    batches_per_epoch: int


def decayed_rate(base: float, epoch: int, decay: float = 0.9, every: int = 10) -> float:
    """Step schedule: base * decay^(epoch // every)."""
    return base * decay ** (epoch // every)


def adam_init(params: dict):
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    return m, v


def adam_step(params, grads, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place ADAM with bias correction; t is the 1-based step index."""
    if t < 1:
        raise DataError("adam step index is 1-based")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for key, p in params.items():
        g = grads[key].astype(p.dtype, copy=False)
        m[key] *= beta1
        m[key] += (1.0 - beta1) * g
        v[key] *= beta2
        v[key] += (1.0 - beta2) * (g * g)
        mhat = m[key] / c1
        vhat = v[key] / c2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype, copy=False)


def load_training_samples(dataset_root, window: int, bins: int, unroll: int, max_chunks: int = 0):
    """Voxelize a dataset into (voxels, targets) unroll chunks.

    Returns (samples, geometry); each sample is a pair of float32 arrays
    shaped (unroll, bins, h, w) and (unroll, h, w). Targets are the
    ground-truth frames nearest in time to each window's last event.
    """
    manifest = load_manifest(dataset_root)
    samples = []
    geometry = None
    for seq_dir in manifest.sequence_dirs():
        stream = read_events_bin(os.path.join(seq_dir, "events.bin"))
        geometry = stream.geometry
        gts = read_video_dir(seq_dir)
        windows = window_by_count(stream, window)
        if len(windows) < unroll:
            raise DataError(
                f"{seq_dir}: only {len(windows)} complete windows of {window} events; "
                f"need at least {unroll} to unroll"
            )
        gt_times = np.array([f.t for f in gts], np.int64)
        n_chunks = len(windows) // unroll
        if max_chunks:
            n_chunks = min(n_chunks, max_chunks)
        for c in range(n_chunks):
            chunk = windows[c * unroll : (c + 1) * unroll]
            vox = np.stack([voxelize(wd, bins).values for wd in chunk])
            tgt = np.stack(
                [
                    gts[int(np.argmin(np.abs(gt_times - wd.t_last)))].values.astype(np.float32)
                    for wd in chunk
                ]
            )
            samples.append((vox.astype(np.float32), tgt))
    return samples, geometry


def _unrolled_batch(weights, xb, tb, k_frames, ssim_weight):
    """Forward/backward one batch; returns (loss, grads summed over steps)."""
    n, steps = xb.shape[0], xb.shape[1]
    h, w = xb.shape[3], xb.shape[4]
    state = np.full((n, k_frames, h, w), 0.5, np.float32)

    caches, dpreds = [], []
    total_loss = 0.0
    for l in range(steps):
        inp = np.concatenate([xb[:, l], state], axis=1)
        y, cache = unet_forward(weights, inp, mode="train", update_stats=True)
        pred = y[:, 0]
        loss_l, dpred_l = recon_loss(pred, tb[:, l], ssim_weight)
        total_loss += loss_l
        caches.append(cache)
        dpreds.append(dpred_l.astype(np.float32))
        if k_frames:
            state = np.concatenate([state[:, 1:], pred[:, None].astype(np.float32)], axis=1)

    if not np.isfinite(total_loss):
        raise NumericError(f"training loss is not finite ({total_loss})")

    grads_sum = None
    bins = xb.shape[2]
    for l in reversed(range(steps)):
        dy = dpreds[l][:, None]
        grads_l, dinp = unet_backward(weights, caches[l], dy)
        if grads_sum is None:
            grads_sum = grads_l
        else:
            for key in grads_sum:
                grads_sum[key] += grads_l[key]
        for j in range(k_frames):
            src = l - k_frames + j
            if src >= 0:
                dpreds[src] += dinp[:, bins + j]
    return total_loss, grads_sum


def train(
    dataset_root,
    net_config: NetConfig,
    config: TrainConfig,
    progress=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Train on a simulated dataset directory; deterministic in config.seed."""
    samples, _ = load_training_samples(
        dataset_root, config.window, net_config.bins, config.unroll, config.max_chunks_per_seq
    )
    if len(samples) < config.batch_size:
        raise DataError(
            f"{len(samples)} unroll samples cannot fill a batch of {config.batch_size}"
        )
    weights = init_weights(net_config, config.seed, np.float32)
    m, v = adam_init(weights.params)
    rng = np.random.default_rng([config.seed, 0x7261696E])
    k_frames = net_config.recurrent_frames
    n_batches = len(samples) // config.batch_size

    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)

    step = 0
    epoch_losses = []
    for epoch in range(config.epochs):
        lr = decayed_rate(config.learning_rate, epoch, config.lr_decay, config.lr_decay_every)
        order = rng.permutation(len(samples))
        batch_losses = []
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            xb = np.stack([samples[i][0] for i in idx])
            tb = np.stack([samples[i][1] for i in idx])
            try:
                loss, grads = _unrolled_batch(weights, xb, tb, k_frames, config.ssim_weight)
            except NumericError:
                if checkpoint_dir:
                    save_weights(weights, os.path.join(checkpoint_dir, "diverged.e2vw"))
                raise
            step += 1
            adam_step(
                weights.params, grads, m, v, step, lr,
                config.beta1, config.beta2, config.adam_eps,
            )
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        epoch_losses.append(epoch_loss)
        if progress:
            progress(epoch, epoch_loss, lr)
        if (
            checkpoint_dir
            and config.checkpoint_every
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            save_weights(
                weights, os.path.join(checkpoint_dir, f"checkpoint_ep{epoch + 1:03d}.e2vw")
            )
    return TrainResult(weights, epoch_losses, len(samples), n_batches)
