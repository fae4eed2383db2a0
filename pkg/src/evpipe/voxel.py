"""Voxel-grid tensorization of event windows and the network input stack.

A window of events is rasterized into B temporal bins with bilinear weight
splitting along time: an event at normalized time ``ts`` contributes
``p * max(0, 1 - |n - ts|)`` to bin ``n``, i.e. its full polarity is divided
between the two neighboring bins. Summed over the grid this conserves total
signed polarity exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .events import EventWindow, SensorGeometry

TENSOR_HEADER_DTYPE = np.dtype([("bins", "<u2"), ("height", "<u2"), ("width", "<u2")])


@dataclass
class EventTensor:
    """A (bins, height, width) voxel grid of signed event mass."""

    values: np.ndarray
    bins: int
    geometry: SensorGeometry


@dataclass
class NetworkInput:
    """Voxel bins stacked with the K previous reconstructions, oldest first."""

    values: np.ndarray  # (bins + K, height, width)
    bins: int
    geometry: SensorGeometry


def voxelize(window: EventWindow, bins: int) -> EventTensor:
    """Rasterize an event window into a voxel grid.

    Normalized time is ``(bins-1) * (t - t0) / (t_last - t0)``; a window of
    zero duration sends everything to bin 0. The two bilinear weights of an
    event are the exact rationals (dt - r)/dt and r/dt with integer remainder
    r, and each voxel accumulates integer numerators before a single final
    division. That makes the grid bit-identical under event permutation and
    exactly sign-symmetric under polarity flips.
    """
    if bins < 1:
        raise DataError(f"bin count must be >= 1, got {bins}")
    ev = window.events
    g = ev.geometry
    h, w = g.height, g.width
    if len(ev) and (
        ev.x.min() < 0 or ev.x.max() >= w or ev.y.min() < 0 or ev.y.max() >= h
    ):
        raise DataError("window contains events outside the sensor geometry")

    grid = np.zeros(bins * h * w, np.float64)
    if len(ev):
        if window.t0 > int(ev.t.min()) or window.t_last < int(ev.t.max()):
            raise DataError("window bounds do not cover its events")
        dt = window.t_last - window.t0
        n = len(ev)
        if dt > 0 and bins > 1:
            scaled = (bins - 1) * (ev.t - window.t0)
            tis = scaled // dt
            rem = scaled - tis * dt
        else:
            dt = 1
            tis = np.zeros(n, np.int64)
            rem = np.zeros(n, np.int64)
        pol = ev.p.astype(np.int64)
        pix = ev.y.astype(np.int64) * w + ev.x.astype(np.int64)
        idx = tis * (h * w) + pix

        # Integer-valued float64 sums stay exact while every partial sum is
        # below 2^53; bincount beats add.at by an order of magnitude.
        if n * dt < 2**53:
            grid += np.bincount(idx, weights=pol * (dt - rem), minlength=len(grid))
            right = np.nonzero(rem)[0]
            if len(right):
                grid += np.bincount(
                    idx[right] + h * w,
                    weights=pol[right] * rem[right],
                    minlength=len(grid),
                )
            grid /= dt
        else:
            acc = np.zeros(bins * h * w, object)
            np.add.at(acc, idx, [int(v) for v in pol * (dt - rem)])
            right = np.nonzero(rem)[0]
            np.add.at(acc, idx[right] + h * w, [int(v) for v in pol[right] * rem[right]])
            grid = (acc / dt).astype(np.float64)
    return EventTensor(grid.reshape(bins, h, w), bins, g)


def stack_input(tensor: EventTensor, prev_frames) -> NetworkInput:
    """Concatenate voxel bins with K previous frames (most recent last)."""
    g = tensor.geometry
    planes = [np.asarray(tensor.values, np.float64)]
    for frame in prev_frames:
        vals = np.asarray(frame.values, np.float64)
        if vals.shape != (g.height, g.width):
            raise DataError(
                f"recurrent frame shape {vals.shape} does not match sensor "
                f"{(g.height, g.width)}"
            )
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise DataError("recurrent frame values must lie in [0, 1]")
        planes.append(vals[None])
    return NetworkInput(np.concatenate(planes, axis=0), tensor.bins, g)


def write_tensor(path, tensor: EventTensor) -> None:
    """Dump a voxel grid: u16 bins/height/width header then LE float32 data."""
    header = np.array(
        [(tensor.bins, tensor.geometry.height, tensor.geometry.width)],
        TENSOR_HEADER_DTYPE,
    )
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f4").tobytes())


def read_tensor(path) -> EventTensor:
    with open(path, "rb") as fh:
        header = fh.read(TENSOR_HEADER_DTYPE.itemsize)
        if len(header) != TENSOR_HEADER_DTYPE.itemsize:
            raise DataError(f"{path}: truncated tensor header")
        bins, h, w = (int(v) for v in np.frombuffer(header, TENSOR_HEADER_DTYPE)[0])
        body = fh.read()
    if len(body) != bins * h * w * 4:
        raise DataError(f"{path}: tensor body size mismatch")
    values = np.frombuffer(body, "<f4").reshape(bins, h, w).astype(np.float32)
    return EventTensor(values, bins, SensorGeometry(w, h))
