"""Event streams: types, text/binary I/O, windowing, validation.

Events are kept as a structure of arrays (one numpy array per field) so the
whole pipeline can stay vectorized. Timestamps are integer microseconds,
polarity is stored as +1 / -1.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError

US_PER_SECOND = 1_000_000

BINARY_MAGIC = b"EVST"

# 13-byte packed record: 64-bit microsecond timestamp split into two LE
# 32-bit words, pixel coordinates, signed polarity byte.
RECORD_DTYPE = np.dtype(
    [("t_lo", "<u4"), ("t_hi", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")]
)


@dataclass(frozen=True)
class SensorGeometry:
    """Pixel array dimensions. x ranges over [0, width), y over [0, height)."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataError(f"degenerate sensor geometry {self.width}x{self.height}")

    @property
    def resolution(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class Event:
    """A single brightness-change event."""

    x: int
    y: int
    t: int  # microseconds
    p: int  # +1 or -1


@dataclass
class EventStream:
    """Time-sorted events over a fixed sensor geometry.

    Sortedness is required on ingest and never imposed silently; use
    :func:`sort_by_time` to repair an unsorted stream explicitly.
    """

    geometry: SensorGeometry
    t: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    p: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8))

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise DataError("event field arrays disagree in length")

    def __len__(self) -> int:
        return len(self.t)

    def event(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    @classmethod
    def from_events(cls, geometry: SensorGeometry, events) -> "EventStream":
        evs = list(events)
        return cls(
            geometry,
            t=np.array([e.t for e in evs], np.int64),
            x=np.array([e.x for e in evs], np.int32),
            y=np.array([e.y for e in evs], np.int32),
            p=np.array([e.p for e in evs], np.int8),
        )

    def slice(self, start: int, stop: int) -> "EventStream":
        """View (no copy) of events[start:stop] as a new stream."""
        return EventStream(
            self.geometry,
            self.t[start:stop],
            self.x[start:stop],
            self.y[start:stop],
            self.p[start:stop],
        )


@dataclass
class EventWindow:
    """A contiguous, fixed-count slice of a stream."""

    events: EventStream
    t0: int
    t_last: int

    def __len__(self) -> int:
        return len(self.events)

    @property
    def duration_us(self) -> int:
        return self.t_last - self.t0


@dataclass
class ValidationReport:
    n_events: int
    out_of_bounds: int
    time_inversions: int
    bad_polarity: int

    @property
    def ok(self) -> bool:
        return self.out_of_bounds == 0 and self.time_inversions == 0 and self.bad_polarity == 0


def _coerce_polarity(raw: int) -> int:
    # Accept {0,1} and {-1,+1} conventions; 0 means "off" i.e. negative.
    if raw == 1:
        return 1
    if raw in (0, -1):
        return -1
    raise ValueError(f"polarity {raw} not in {{-1, 0, 1}}")


def parse_event_text(source, geometry: SensorGeometry) -> EventStream:
    """Parse a ``t_seconds x y p`` text stream into an EventStream.

    ``source`` is a filesystem path or an iterable of lines. Timestamps are
    rounded to the nearest microsecond. Blank lines and ``#`` comments are
    skipped. Raises ParseError (with a line number) on malformed input,
    out-of-bounds coordinates, or decreasing timestamps.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r") as fh:
            return parse_event_text(fh, geometry)

    ts, xs, ys, ps = [], [], [], []
    prev_t = None
    w, h = geometry.width, geometry.height
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields, got {len(parts)}", line=lineno)
        try:
            t = round(float(parts[0]) * US_PER_SECOND)
            x = int(parts[1])
            y = int(parts[2])
            p = _coerce_polarity(int(parts[3]))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not (0 <= x < w):
            raise ParseError(f"x={x} outside [0, {w})", line=lineno)
        if not (0 <= y < h):
            raise ParseError(f"y={y} outside [0, {h})", line=lineno)
        if prev_t is not None and t < prev_t:
            raise ParseError(f"timestamp decreases ({t} us after {prev_t} us)", line=lineno)
        prev_t = t
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)

    return EventStream(
        geometry,
        t=np.array(ts, np.int64),
        x=np.array(xs, np.int32),
        y=np.array(ys, np.int32),
        p=np.array(ps, np.int8),
    )


def write_event_text(stream: EventStream, dest) -> None:
    """Write ``t_seconds x y p`` lines; exact microsecond round trip."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as fh:
            write_event_text(stream, fh)
            return
    t, x, y, p = stream.t, stream.x, stream.y, stream.p
    buf = io.StringIO()
    for i in range(len(stream)):
        ti = int(t[i])
        buf.write(f"{ti // US_PER_SECOND}.{ti % US_PER_SECOND:06d} {x[i]} {y[i]} {p[i]}\n")
    dest.write(buf.getvalue())


def write_events_bin(stream: EventStream, path) -> None:
    """Write the binary container: EVST magic, u16 WxH, u64 count, records."""
    t = stream.t.astype(np.int64)
    if len(t) and t.min() < 0:
        raise DataError("binary event container requires nonnegative timestamps")
    rec = np.empty(len(stream), RECORD_DTYPE)
    rec["t_lo"] = (t & 0xFFFFFFFF).astype(np.uint32)
    rec["t_hi"] = (t >> 32).astype(np.uint32)
    rec["x"] = stream.x.astype(np.uint16)
    rec["y"] = stream.y.astype(np.uint16)
    rec["p"] = stream.p
    header = (
        BINARY_MAGIC
        + np.uint16(stream.geometry.width).tobytes()
        + np.uint16(stream.geometry.height).tobytes()
        + np.uint64(len(stream)).tobytes()
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def read_events_bin(path) -> EventStream:
    """Read the binary container, checking magic, counts, bounds and order."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16 or header[:4] != BINARY_MAGIC:
            raise DataError(f"{path}: not an event container (bad magic)")
        width = int(np.frombuffer(header, "<u2", 1, 4)[0])
        height = int(np.frombuffer(header, "<u2", 1, 6)[0])
        count = int(np.frombuffer(header, "<u8", 1, 8)[0])
        body = fh.read()
    if len(body) != count * RECORD_DTYPE.itemsize:
        raise DataError(
            f"{path}: header promises {count} records, body holds "
            f"{len(body) // RECORD_DTYPE.itemsize}"
        )
    rec = np.frombuffer(body, RECORD_DTYPE)
    t = rec["t_lo"].astype(np.int64) | (rec["t_hi"].astype(np.int64) << 32)
    geometry = SensorGeometry(width, height)
    stream = EventStream(
        geometry,
        t=t,
        x=rec["x"].astype(np.int32),
        y=rec["y"].astype(np.int32),
        p=rec["p"].astype(np.int8),
    )
    report = validate_stream(stream)
    if not report.ok:
        raise DataError(
            f"{path}: invalid stream ({report.out_of_bounds} out of bounds, "
            f"{report.time_inversions} inversions, {report.bad_polarity} bad polarities)"
        )
    return stream


def validate_stream(stream: EventStream) -> ValidationReport:
    """Count geometry, ordering and polarity violations (vectorized)."""
    g = stream.geometry
    oob = int(
        np.count_nonzero(
            (stream.x < 0) | (stream.x >= g.width) | (stream.y < 0) | (stream.y >= g.height)
        )
    )
    inversions = int(np.count_nonzero(np.diff(stream.t) < 0))
    badp = int(np.count_nonzero((stream.p != 1) & (stream.p != -1)))
    return ValidationReport(len(stream), oob, inversions, badp)


def sort_by_time(stream: EventStream) -> EventStream:
    """Return a copy sorted by (t, y, x, p). Explicit repair, never implicit."""
    order = np.lexsort((stream.p, stream.x, stream.y, stream.t))
    return EventStream(
        stream.geometry,
        stream.t[order].copy(),
        stream.x[order].copy(),
        stream.y[order].copy(),
        stream.p[order].copy(),
    )


def window_by_count(stream: EventStream, n: int) -> list[EventWindow]:
    """Split into non-overlapping windows of exactly ``n`` events.

    The trailing remainder (fewer than ``n`` events) is dropped. Windows
    share memory with the parent stream.
    """
    if n < 1:
        raise DataError(f"window size must be >= 1, got {n}")
    count = len(stream) // n
    windows = []
    for k in range(count):
        sl = stream.slice(k * n, (k + 1) * n)
        windows.append(EventWindow(sl, t0=int(sl.t[0]), t_last=int(sl.t[-1])))
    return windows


def window_durations(windows) -> np.ndarray:
    """Window spans (t_last - t0) in seconds, as float64."""
    return np.array([w.duration_us for w in windows], np.float64) / US_PER_SECOND
