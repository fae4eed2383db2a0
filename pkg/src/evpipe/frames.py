"""Intensity frames and the on-disk video layout (numbered PGM + timestamps)."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import DataError

FRAME_PATTERN = "frame_%06d.pgm"
FRAMES_SUBDIR = "frames"
TIMESTAMPS_NAME = "timestamps.txt"


@dataclass
class Frame:
    """A single intensity image, values in [0, 1], timestamped in microseconds."""

    values: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, np.float64)
        if self.values.ndim != 2:
            raise DataError(f"frame must be 2-D, got shape {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape


def write_pgm(path, values: np.ndarray) -> None:
    """Write a [0,1] float image as binary 8-bit PGM (P5)."""
    img = np.clip(np.asarray(values, np.float64), 0.0, 1.0)
    data = np.rint(img * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM back to floats in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # possibly interleaved with '#' comments, then a single whitespace byte.
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise DataError(f"{path}: PGM body holds {len(body)} bytes, need {w * h}")
    return np.frombuffer(body, np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_video_dir(dirpath, frames) -> None:
    """Write a video directory: frames/frame_%06d.pgm plus timestamps.txt.

    Timestamps (microseconds, one per line) sit at the directory root; the
    simulator and the reconstructors share this layout.
    """
    frame_dir = os.path.join(dirpath, FRAMES_SUBDIR)
    os.makedirs(frame_dir, exist_ok=True)
    lines = []
    for i, frame in enumerate(frames):
        write_pgm(os.path.join(frame_dir, FRAME_PATTERN % i), frame.values)
        lines.append(f"{frame.t}\n")
    with open(os.path.join(dirpath, TIMESTAMPS_NAME), "w") as fh:
        fh.writelines(lines)


def read_video_dir(dirpath) -> list[Frame]:
    """Read a video directory written by :func:`write_video_dir`."""
    ts_path = os.path.join(dirpath, TIMESTAMPS_NAME)
    if not os.path.exists(ts_path):
        raise DataError(f"{dirpath}: missing {TIMESTAMPS_NAME}")
    with open(ts_path) as fh:
        stamps = [int(line.strip()) for line in fh if line.strip()]
    frame_dir = os.path.join(dirpath, FRAMES_SUBDIR)
    if not os.path.isdir(frame_dir):
        raise DataError(f"{dirpath}: missing {FRAMES_SUBDIR}/ subdirectory")
    names = sorted(f for f in os.listdir(frame_dir) if re.fullmatch(r"frame_\d{6}\.pgm", f))
    if len(names) != len(stamps):
        raise DataError(f"{dirpath}: {len(names)} frames but {len(stamps)} timestamps")
    return [
        Frame(read_pgm(os.path.join(frame_dir, name)), t=t)
        for name, t in zip(names, stamps)
    ]
