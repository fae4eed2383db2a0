"""Image reconstruction from events: integration and high-pass baselines,
bilateral smoothing, and the recurrent network driver.

The filter baselines track per-pixel log luminance. Display maps a log
value L to clamp(exp(L + log 0.5), 0, 1), i.e. mid-gray for a pixel that
has seen no net change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .events import Event, EventStream, SensorGeometry, US_PER_SECOND, window_by_count
from .frames import Frame
from .voxel import EventTensor, stack_input, voxelize

DEFAULT_ALPHA = 2.0 * math.pi * 5.0  # high-pass cutoff, rad/s
NOMINAL_THRESHOLD = 0.18

LOG_HALF = math.log(0.5)


@dataclass
class IntegrationState:
    """Running sum of threshold steps per pixel."""

    loglum: np.ndarray
    c: float

    @classmethod
    def zeros(cls, geometry: SensorGeometry, c: float = NOMINAL_THRESHOLD):
        if c <= 0:
            raise DataError("integration threshold must be positive")
        return cls(np.zeros((geometry.height, geometry.width), np.float64), c)


@dataclass
class HighpassState:
    """Leaky per-pixel integrator; values decay toward zero between events."""

    loglum: np.ndarray
    last_t: np.ndarray  # microseconds, per pixel
    alpha: float
    c: float

    @classmethod
    def zeros(
        cls,
        geometry: SensorGeometry,
        alpha: float = DEFAULT_ALPHA,
        c: float = NOMINAL_THRESHOLD,
        t0: int = 0,
    ):
        if alpha < 0:
            raise DataError("high-pass alpha must be nonnegative")
        if c <= 0:
            raise DataError("high-pass threshold must be positive")
        shape = (geometry.height, geometry.width)
        return cls(np.zeros(shape, np.float64), np.full(shape, t0, np.int64), alpha, c)


@dataclass
class RecurrentState:
    """The K previous reconstructions, oldest first."""

    frames: list


def integrate(state: IntegrationState, events: EventStream) -> IntegrationState:
    """Accumulate p*c per event. Order-free: addition over each pixel."""
    flat = state.loglum.ravel()
    w = state.loglum.shape[1]
    pix = events.y.astype(np.int64) * w + events.x.astype(np.int64)
    flat += np.bincount(pix, weights=events.p * state.c, minlength=flat.size)
    return state


def highpass_step(state: HighpassState, event: Event) -> HighpassState:
    """Fold one event into the leaky integrator."""
    if event.t < state.last_t[event.y, event.x]:
        raise DataError(
            f"event at t={event.t} us precedes pixel's last update "
            f"({int(state.last_t[event.y, event.x])} us)"
        )
    dt = (event.t - state.last_t[event.y, event.x]) / US_PER_SECOND
    state.loglum[event.y, event.x] = (
        state.loglum[event.y, event.x] * math.exp(-state.alpha * dt) + event.p * state.c
    )
    state.last_t[event.y, event.x] = event.t
    return state


def highpass_run(state: HighpassState, events: EventStream) -> HighpassState:
    """Vectorized equivalent of folding highpass_step over a sorted batch.

    Uses the linear-filter identity: rebasing every contribution to a common
    reference time turns the recurrence into a plain per-pixel sum,
    v(t_k) = v0 * exp(-a (t_k - t0)) + sum_i p_i c exp(-a (t_k - t_i)).
    """
    n = len(events)
    if n == 0:
        return state
    t = events.t
    if np.any(np.diff(t) < 0):
        raise DataError("high-pass run requires a time-sorted batch")
    h, w = state.loglum.shape
    pix = events.y.astype(np.int64) * w + events.x.astype(np.int64)
    last = state.last_t.ravel()
    if np.any(t < last[pix]):
        raise DataError("batch contains events older than the filter state")

    ref = int(t[-1])
    scale = state.alpha / US_PER_SECOND
    contrib = events.p * state.c * np.exp((t - ref) * scale)
    z = np.bincount(pix, weights=contrib, minlength=h * w)

    # Last event index per pixel: later assignments win.
    idx_last = np.full(h * w, -1, np.int64)
    idx_last[pix] = np.arange(n)
    touched = idx_last >= 0
    t_new = t[idx_last[touched]]

    flat = state.loglum.ravel()
    z0 = flat[touched] * np.exp((last[touched] - ref) * scale)
    flat[touched] = (z0 + z[touched]) * np.exp((ref - t_new) * scale)
    last[touched] = t_new
    return state


def state_to_frame(state, t: int) -> Frame:
    """Display transform at query time t (microseconds)."""
    if isinstance(state, IntegrationState):
        log = state.loglum
    elif isinstance(state, HighpassState):
        dt = (t - state.last_t) / US_PER_SECOND
        if dt.min() < 0:
            raise DataError(f"query time {t} us precedes the filter state")
        log = state.loglum * np.exp(-state.alpha * dt)
    else:
        raise DataError(f"cannot render a frame from {type(state).__name__}")
    return Frame(np.exp(np.minimum(log + LOG_HALF, 0.0)), t=t)


def bilateral_filter(values: np.ndarray, d: int = 5, sigma: float = 25.0) -> np.ndarray:
    """Edge-preserving smoothing over a d x d neighborhood.

    Spatial sigma is ``sigma`` (in pixels); range sigma is ``sigma / 255``
    (intensities live in [0, 1]). Borders replicate the edge pixel.
    """
    if d < 1 or d % 2 == 0:
        raise DataError(f"bilateral window must be odd and positive, got {d}")
    v = np.asarray(values, np.float64)
    r = d // 2
    sigma_s = float(sigma)
    sigma_r = float(sigma) / 255.0
    padded = np.pad(v, r, mode="edge")
    num = np.zeros_like(v)
    den = np.zeros_like(v)
    h, w = v.shape
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            shifted = padded[r + di : r + di + h, r + dj : r + dj + w]
            wgt = np.exp(
                -(di * di + dj * dj) / (2.0 * sigma_s * sigma_s)
                - ((shifted - v) ** 2) / (2.0 * sigma_r * sigma_r)
            )
            num += wgt * shifted
            den += wgt
    return num / den


def reset_state(geometry: SensorGeometry, k: int) -> RecurrentState:
    """K mid-gray frames: the network's do-not-know initialization."""
    if k < 0:
        raise DataError("recurrent frame count must be nonnegative")
    return RecurrentState(
        [Frame(np.full((geometry.height, geometry.width), 0.5), t=0) for _ in range(k)]
    )


def e2v_step(state: RecurrentState, tensor: EventTensor, weights, t: int = 0):
    """One recurrent reconstruction step: returns (Frame, new state)."""
    from .net.unet import unet_forward

    cfg = weights.config
    if tensor.bins != cfg.bins:
        raise DataError(
            f"voxel grid has {tensor.bins} bins but weights expect {cfg.bins}"
        )
    if len(state.frames) != cfg.recurrent_frames:
        raise DataError(
            f"state holds {len(state.frames)} frames but weights expect "
            f"{cfg.recurrent_frames}"
        )
    net_in = stack_input(tensor, state.frames)
    y, _ = unet_forward(weights, net_in.values[None].astype(np.float32), mode="eval")
    pred = Frame(y[0, 0].astype(np.float64), t=t)
    new_frames = state.frames[1:] + [pred] if cfg.recurrent_frames else []
    return pred, RecurrentState(new_frames)


def reconstruct_video(
    stream: EventStream,
    method: str,
    window: int,
    weights=None,
    threshold: float = NOMINAL_THRESHOLD,
    alpha: float = DEFAULT_ALPHA,
    bilateral: bool = False,
) -> list:
    """Window the stream and emit one frame per window (at its last event).

    Methods: ``integrate``, ``highpass``, ``e2v``. The optional bilateral
    pass smooths each output frame (the usual companion of the high-pass
    filter).
    """
    windows = window_by_count(stream, window)
    if not windows:
        raise DataError(
            f"stream of {len(stream)} events yields no {window}-event window"
        )
    g = stream.geometry
    out = []
    if method == "integrate":
        state = IntegrationState.zeros(g, threshold)
        for wd in windows:
            integrate(state, wd.events)
            out.append(state_to_frame(state, wd.t_last))
    elif method == "highpass":
        state = HighpassState.zeros(g, alpha, threshold, t0=windows[0].t0)
        for wd in windows:
            highpass_run(state, wd.events)
            out.append(state_to_frame(state, wd.t_last))
    elif method == "e2v":
        if weights is None:
            raise DataError("the learned method needs a weight file")
        state = reset_state(g, weights.config.recurrent_frames)
        for wd in windows:
            tensor = voxelize(wd, weights.config.bins)
            frame, state = e2v_step(state, tensor, weights, t=wd.t_last)
            out.append(frame)
    else:
        raise DataError(f"unknown reconstruction method {method!r}")
    if bilateral:
        out = [Frame(bilateral_filter(f.values), t=f.t) for f in out]
    return out
