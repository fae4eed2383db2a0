"""Evaluation: histogram equalization, MSE/SSIM, frame matching, tables,
throughput and latency reports.

SSIM follows the windowed formulation: an 11x11 Gaussian (sigma 1.5) taken
over valid positions only, K1=0.01, K2=0.03, dynamic range 1.0. The same
windowed statistics feed the training loss, which adds the exact gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .events import window_by_count

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def hist_equalize(values: np.ndarray) -> np.ndarray:
    """Map values through their empirical 256-bin CDF onto [0, 1].

    Monotone by construction; a constant frame maps to all ones.
    """
    v = np.clip(np.asarray(values, np.float64), 0.0, 1.0)
    idx = np.minimum((v * 256.0).astype(np.int64), 255)
    hist = np.bincount(idx.ravel(), minlength=256)
    cdf = np.cumsum(hist) / v.size
    return cdf[idx]


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise DataError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def gaussian_kernel1d(sigma: float = SSIM_SIGMA, size: int = SSIM_WINDOW) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is its outer product."""
    r = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64) - r
    g = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return g / g.sum()


def _corr1d_valid(x: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    xm = np.moveaxis(x, axis, -1)
    k = len(g)
    n = xm.shape[-1] - k + 1
    if n < 1:
        raise DataError(f"window of {k} does not fit axis of length {xm.shape[-1]}")
    sh = xm.shape[:-1] + (n, k)
    st = xm.strides + (xm.strides[-1],)
    win = np.lib.stride_tricks.as_strided(xm, sh, st, writeable=False)
    return np.moveaxis(win @ g, -1, axis)


def blur_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation over the last two axes."""
    return _corr1d_valid(_corr1d_valid(x, g, -1), g, -2)


def blur_valid_adjoint(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Adjoint of blur_valid: full-mode convolution (g is symmetric)."""
    k = len(g) - 1
    pad = [(0, 0)] * (u.ndim - 2) + [(k, k), (k, k)]
    return blur_valid(np.pad(u, pad), g)


def ssim_parts(x: np.ndarray, y: np.ndarray, data_range: float = 1.0):
    """Windowed SSIM statistics; returns the per-window map and intermediates."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    if x.shape != y.shape:
        raise DataError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise DataError(
            f"frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for ssim, got {x.shape[-2:]}"
        )
    g = gaussian_kernel1d()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    ux = blur_valid(x, g)
    uy = blur_valid(y, g)
    sxx = blur_valid(x * x, g) - ux * ux
    syy = blur_valid(y * y, g) - uy * uy
    sxy = blur_valid(x * y, g) - ux * uy
    a1 = 2.0 * ux * uy + c1
    a2 = 2.0 * sxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = sxx + syy + c2
    smap = (a1 * a2) / (b1 * b2)
    return {
        "map": smap, "ux": ux, "uy": uy, "sxx": sxx, "syy": syy, "sxy": sxy,
        "a1": a1, "a2": a2, "b1": b1, "b2": b2, "g": g, "x": x, "y": y,
    }


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean local SSIM over all valid window positions."""
    return float(np.mean(ssim_parts(a, b, data_range)["map"]))


@dataclass
class FramePair:
    gt_index: int
    recon_index: int
    dt_us: int


def match_frames(recon_times, gt_times, tolerance_us: int = 1000) -> list:
    """Pair each ground-truth time with the nearest reconstruction time.

    Only pairs within +/-tolerance_us are kept; an exact tie between two
    reconstructions resolves to the earlier one. A reconstruction may serve
    several ground-truth frames.
    """
    rt = np.asarray(recon_times, np.int64)
    if len(rt) == 0:
        return []
    if np.any(np.diff(rt) < 0):
        raise DataError("reconstruction timestamps must be sorted")
    pairs = []
    for gi, tg in enumerate(gt_times):
        tg = int(tg)
        k = int(np.searchsorted(rt, tg))
        best, best_dt = None, None
        for cand in (k - 1, k):
            if 0 <= cand < len(rt):
                dt = abs(int(rt[cand]) - tg)
                if best is None or dt < best_dt:  # strict: ties keep the earlier
                    best, best_dt = cand, dt
        if best is not None and best_dt <= tolerance_us:
            pairs.append(FramePair(gi, best, int(rt[best]) - tg))
    return pairs


@dataclass
class SequenceMetrics:
    mse: float
    ssim: float
    n_pairs: int
    n_gt: int


def evaluate_sequence(
    recon_frames,
    gt_frames,
    tolerance_us: int = 1000,
    warmup: int = 0,
    tail: int = 0,
    equalize: bool = True,
) -> SequenceMetrics:
    """Match frames and average MSE/SSIM over the matched pairs.

    ``warmup`` and ``tail`` drop ground-truth frames at the ends before
    matching. Both images are histogram-equalized before comparison unless
    ``equalize`` is off.
    """
    gt = list(gt_frames)
    n_gt_all = len(gt)
    gt = gt[warmup : n_gt_all - tail if tail else None]
    if not gt:
        raise DataError("no ground-truth frames left after warmup/tail exclusion")
    recon = list(recon_frames)
    pairs = match_frames([f.t for f in recon], [f.t for f in gt], tolerance_us)
    if not pairs:
        raise DataError(
            f"no frame pairs within {tolerance_us} us "
            f"({len(recon)} recon vs {len(gt)} ground-truth frames)"
        )
    mses, ssims = [], []
    for pair in pairs:
        r = recon[pair.recon_index].values
        g = gt[pair.gt_index].values
        if equalize:
            r = hist_equalize(r)
            g = hist_equalize(g)
        mses.append(mse(r, g))
        ssims.append(ssim(r, g))
    return SequenceMetrics(float(np.mean(mses)), float(np.mean(ssims)), len(pairs), len(gt))


@dataclass
class MetricsTable:
    """Per-sequence metrics for several methods plus an unweighted Mean row."""

    sequences: list
    methods: list
    cells: dict  # (sequence, method) -> SequenceMetrics

    PRECISION = 6

    def _rounded(self, seq, method):
        cell = self.cells[(seq, method)]
        return round(cell.mse, self.PRECISION), round(cell.ssim, self.PRECISION)

    def mean_row(self):
        """Mean of the displayed (rounded) per-sequence values, per method."""
        out = {}
        for method in self.methods:
            vals = [self._rounded(seq, method) for seq in self.sequences]
            out[method] = (
                round(float(np.mean([v[0] for v in vals])), self.PRECISION),
                round(float(np.mean([v[1] for v in vals])), self.PRECISION),
            )
        return out

    def render_text(self) -> str:
        """Aligned table; the best value per row is starred (low MSE, high SSIM)."""
        fmt = f"{{:.{self.PRECISION}f}}"
        rows = []
        for seq in self.sequences:
            rows.append((seq, {m: self._rounded(seq, m) for m in self.methods}))
        rows.append(("Mean", self.mean_row()))

        header = ["sequence"]
        for m in self.methods:
            header += [f"{m}:mse", f"{m}:ssim"]
        table = [header]
        for name, vals in rows:
            best_mse = min(vals[m][0] for m in self.methods)
            best_ssim = max(vals[m][1] for m in self.methods)
            line = [name]
            for m in self.methods:
                v_mse, v_ssim = vals[m]
                line.append(fmt.format(v_mse) + ("*" if v_mse == best_mse else ""))
                line.append(fmt.format(v_ssim) + ("*" if v_ssim == best_ssim else ""))
            table.append(line)
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        lines = []
        for row in table:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        """Long-format CSV: sequence,method,mse,ssim,frames (same numbers)."""
        fmt = f"{{:.{self.PRECISION}f}}"
        lines = ["sequence,method,mse,ssim,frames"]
        for seq in self.sequences:
            for m in self.methods:
                cell = self.cells[(seq, m)]
                v_mse, v_ssim = self._rounded(seq, m)
                lines.append(f"{seq},{m},{fmt.format(v_mse)},{fmt.format(v_ssim)},{cell.n_pairs}")
        means = self.mean_row()
        for m in self.methods:
            total = sum(self.cells[(seq, m)].n_pairs for seq in self.sequences)
            lines.append(f"Mean,{m},{fmt.format(means[m][0])},{fmt.format(means[m][1])},{total}")
        return "\n".join(lines) + "\n"


def aggregate_table(sequences, results: dict) -> MetricsTable:
    """Build a table from {method: [SequenceMetrics, ...]} aligned with sequences."""
    methods = list(results)
    if not methods:
        raise DataError("no methods to aggregate")
    cells = {}
    for method, metrics in results.items():
        if len(metrics) != len(sequences):
            raise DataError(
                f"method {method!r} has {len(metrics)} rows for {len(sequences)} sequences"
            )
        for seq, cell in zip(sequences, metrics):
            cells[(seq, method)] = cell
    return MetricsTable(list(sequences), methods, cells)


@dataclass
class BenchReport:
    method: str
    mev_per_s: float
    frame_ms: float
    events: int
    reps: int


def throughput_bench(
    run_once, n_events: int, n_frames: int, reps: int = 3, method: str = None
) -> "BenchReport":
    """Time ``run_once`` (a callable processing n_events into n_frames).

    Returns the median over ``reps`` repetitions as events/us throughput and
    per-frame synthesis time. ``method`` labels the report; it falls back to
    the callable's name.
    """
    if reps < 1:
        raise DataError("need at least one repetition")
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run_once()
        times.append(time.perf_counter() - t0)
    t_med = float(np.median(times))
    if t_med <= 0:
        t_med = 1e-9
    return BenchReport(
        method=method or getattr(run_once, "__name__", "bench"),
        mev_per_s=n_events / (1e6 * t_med),
        frame_ms=(t_med / max(n_frames, 1)) * 1e3,
        events=n_events,
        reps=reps,
    )


def quantile_type7(sorted_values: np.ndarray, q: float) -> float:
    """Order-statistic quantile with linear interpolation, h = (n-1) q."""
    s = sorted_values
    n = len(s)
    h = (n - 1) * q
    i = int(np.floor(h))
    frac = h - i
    if frac == 0.0 or i + 1 >= n:
        return float(s[i])
    return float(s[i] + frac * (s[i + 1] - s[i]))


@dataclass
class LatencyReport:
    n_windows: int
    min_ms: float
    p25_ms: float
    median_ms: float
    p75_ms: float
    max_ms: float

    def as_lines(self):
        return [
            f"windows={self.n_windows}",
            f"min_ms={self.min_ms:.6f}",
            f"p25_ms={self.p25_ms:.6f}",
            f"median_ms={self.median_ms:.6f}",
            f"p75_ms={self.p75_ms:.6f}",
            f"max_ms={self.max_ms:.6f}",
        ]


def latency_report(stream, n_window: int) -> LatencyReport:
    """Quartiles of window durations (ms) under fixed-count windowing.

    Quantiles are taken in integer microseconds, where the interpolation is
    exact in float64 (quartile weights are dyadic and durations are small
    integers); only the final ms conversion rounds.
    """
    windows = window_by_count(stream, n_window)
    if not windows:
        raise DataError(
            f"stream of {len(stream)} events yields no complete {n_window}-event window"
        )
    dur_us = np.sort(np.array([w.duration_us for w in windows], np.float64))
    q = {p: quantile_type7(dur_us, p) / 1e3 for p in (0.0, 0.25, 0.5, 0.75, 1.0)}
    return LatencyReport(
        n_windows=len(windows),
        min_ms=q[0.0],
        p25_ms=q[0.25],
        median_ms=q[0.5],
        p75_ms=q[0.75],
        max_ms=q[1.0],
    )
