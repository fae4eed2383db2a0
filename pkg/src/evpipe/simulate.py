"""Event-camera simulator: planar scenes warped by a time-varying homography.

The scene is a log-brightness texture. A trajectory maps sensor pixels into
the texture with a homography whose coefficients vary polynomially in time.
Log frames are rendered densely, the per-pixel signal is linearly
interpolated between renders, and events fire at the analytic times where it
crosses the running reference by the contrast threshold. The reference then
moves to the exactly-crossed level, so no crossing is missed or duplicated.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .events import US_PER_SECOND, EventStream, SensorGeometry
from .frames import Frame, read_pgm, write_video_dir
from .events import write_events_bin

MANIFEST_NAME = "manifest.txt"
META_NAME = "meta.txt"
SEQ_PATTERN = "seq_%05d"


@dataclass(frozen=True)
class ContrastThresholds:
    """Per-sequence log-intensity step sizes for ON and OFF events."""

    c_pos: float
    c_neg: float

    def __post_init__(self):
        if self.c_pos <= 0 or self.c_neg <= 0:
            raise DataError("contrast thresholds must be positive")


@dataclass
class PlanarScene:
    """A static log-brightness texture; values must be <= 0 (intensity <= 1)."""

    log_texture: np.ndarray

    def __post_init__(self):
        self.log_texture = np.asarray(self.log_texture, np.float64)
        if self.log_texture.ndim != 2:
            raise DataError("scene texture must be 2-D")


@dataclass
class MotionTrajectory:
    """Homography sensor->texture with degree-<=2 polynomial coefficients.

    ``coeffs`` has shape (3, 3, 3): H(t) = coeffs[0] + coeffs[1]*t + coeffs[2]*t^2,
    with t in seconds. H(t) acts on homogeneous pixel coordinates (x, y, 1).
    """

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, np.float64)
        if self.coeffs.shape != (3, 3, 3):
            raise DataError(f"trajectory coeffs must be (3,3,3), got {self.coeffs.shape}")

    def matrix_at(self, t: float) -> np.ndarray:
        return self.coeffs[0] + self.coeffs[1] * t + self.coeffs[2] * (t * t)

    @classmethod
    def identity(cls, offset_x: float = 0.0, offset_y: float = 0.0) -> "MotionTrajectory":
        h0 = np.eye(3)
        h0[0, 2] = offset_x
        h0[1, 2] = offset_y
        return cls(np.stack([h0, np.zeros((3, 3)), np.zeros((3, 3))]))


@dataclass
class TrajectoryConfig:
    """Sampling bounds for random trajectories (units: texture px, seconds)."""

    speed_min: float = 20.0
    speed_max: float = 45.0
    accel_frac: float = 0.25  # 2nd-order translation, fraction of speed
    rot_rate_max: float = 0.25  # rad/s, encoded polynomially
    zoom_rate_max: float = 0.06  # 1/s
    persp_max: float = 1e-4  # 1/px/s
    margin_frac: float = 0.9  # fraction of the texture margin the path may use


@dataclass
class SimConfig:
    geometry: SensorGeometry
    duration_s: float = 2.0
    render_rate: int = 500  # log-frame renders per second
    gt_rate: int = 125  # ground-truth frames per second; must divide render_rate
    threshold_mean: float = 0.18
    threshold_std: float = 0.03
    threshold_floor: float = 0.01
    seed: int = 0
    texture_scale: int = 6  # texture side = scale * max(sensor side)
    texture_feature_px: float = 8.0
    intensity_range: tuple = (0.06, 0.95)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)

    def __post_init__(self):
        if self.render_rate < 1 or self.gt_rate < 1:
            raise DataError("render_rate and gt_rate must be >= 1")
        if self.render_rate % self.gt_rate != 0:
            raise DataError(
                f"gt_rate {self.gt_rate} must divide render_rate {self.render_rate} "
                "so ground-truth frames fall on render times"
            )
        if self.duration_s <= 0:
            raise DataError("duration must be positive")


@dataclass
class DatasetManifest:
    root: str
    sequences: list

    def sequence_dirs(self):
        return [os.path.join(self.root, name) for name in self.sequences]


def sample_thresholds(
    rng: np.random.Generator,
    mean: float = 0.18,
    std: float = 0.03,
    floor: float = 0.01,
) -> ContrastThresholds:
    """Draw (c_pos, c_neg) from a normal clamped from below at ``floor``."""
    c_pos = max(floor, float(rng.normal(mean, std)))
    c_neg = max(floor, float(rng.normal(mean, std)))
    return ContrastThresholds(c_pos, c_neg)


def make_noise_texture(
    rng: np.random.Generator,
    shape,
    feature_px: float = 12.0,
    intensity_range=(0.06, 0.95),
) -> PlanarScene:
    """Band-limited log-brightness noise: coarse gaussian grid, bilinear upsample."""
    h, w = shape
    lo, hi = intensity_range
    if not (0.0 < lo < hi <= 1.0):
        raise DataError(f"intensity range must satisfy 0 < lo < hi <= 1, got {intensity_range}")
    ch = max(2, int(np.ceil(h / feature_px)) + 1)
    cw = max(2, int(np.ceil(w / feature_px)) + 1)
    coarse = rng.standard_normal((ch, cw))
    yy = np.linspace(0.0, ch - 1.0, h)
    xx = np.linspace(0.0, cw - 1.0, w)
    j0 = np.floor(yy).astype(int)
    i0 = np.floor(xx).astype(int)
    j1 = np.minimum(j0 + 1, ch - 1)
    i1 = np.minimum(i0 + 1, cw - 1)
    fy = (yy - j0)[:, None]
    fx = (xx - i0)[None, :]
    tex = (
        coarse[np.ix_(j0, i0)] * (1 - fy) * (1 - fx)
        + coarse[np.ix_(j0, i1)] * (1 - fy) * fx
        + coarse[np.ix_(j1, i0)] * fy * (1 - fx)
        + coarse[np.ix_(j1, i1)] * fy * fx
    )
    # Squash instead of min-max normalizing: local contrast then does not
    # wash out as the grid grows, so event rates are size-independent.
    tex = 0.5 * (1.0 + np.tanh(tex / 1.6))
    intensity = lo + (hi - lo) * tex
    return PlanarScene(np.log(intensity))


def load_texture_pgm(path, intensity_floor: float = 1.0 / 255.0) -> PlanarScene:
    """Turn an 8-bit PGM image into a log-brightness scene."""
    img = read_pgm(path)
    return PlanarScene(np.log(np.maximum(img, intensity_floor)))


def random_trajectory(
    rng: np.random.Generator,
    geometry: SensorGeometry,
    texture_shape,
    duration_s: float,
    config: TrajectoryConfig = None,
) -> MotionTrajectory:
    """Sample a smooth random trajectory that keeps the sensor inside the texture."""
    cfg = config or TrajectoryConfig()
    th, tw = texture_shape
    w, h = geometry.width, geometry.height
    margin_x = (tw - w) / 2.0
    margin_y = (th - h) / 2.0
    if margin_x <= 1 or margin_y <= 1:
        raise DataError(
            f"texture {texture_shape} leaves no margin around sensor {w}x{h}"
        )

    omega = rng.uniform(-cfg.rot_rate_max, cfg.rot_rate_max)
    zoom = rng.uniform(-cfg.zoom_rate_max, cfg.zoom_rate_max)
    px = rng.uniform(-cfg.persp_max, cfg.persp_max)
    py = rng.uniform(-cfg.persp_max, cfg.persp_max)

    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    tx0, ty0 = (tw - 1) / 2.0, (th - 1) / 2.0

    # Budget translation so start position plus worst-case drift stays inside
    # the texture. Rotation, zoom and perspective sweep the sensor corners
    # too; reserve their maximal excursion before capping translation speed.
    margin = min(margin_x, margin_y) * cfg.margin_frac
    corner_r = 0.5 * np.hypot(w - 1.0, h - 1.0)
    sweep = corner_r * (abs(omega) + abs(zoom)) * duration_s
    sweep += (corner_r + margin) * (abs(px) + abs(py)) * duration_s * (cx + cy) * 1.5
    budget = max(0.0, margin - sweep)
    speed_cap = budget / (duration_s * (1.0 + cfg.accel_frac))
    speed = min(cfg.speed_max, speed_cap) * rng.uniform(
        min(1.0, cfg.speed_min / max(cfg.speed_max, 1e-9)), 1.0
    )
    angle = rng.uniform(0.0, 2.0 * np.pi)
    vx, vy = speed * np.cos(angle), speed * np.sin(angle)
    ax = rng.uniform(-1.0, 1.0) * cfg.accel_frac * speed / max(duration_s, 1e-9)
    ay = rng.uniform(-1.0, 1.0) * cfg.accel_frac * speed / max(duration_s, 1e-9)

    # A(t): small rotation encoded to 2nd order, zoom, accelerating translation,
    # mild perspective. All entries are polynomials of degree <= 2 in t.
    a0 = np.array([[1.0, 0.0, tx0], [0.0, 1.0, ty0], [0.0, 0.0, 1.0]])
    a1 = np.array([[zoom, -omega, vx], [omega, zoom, vy], [px, py, 0.0]])
    a2 = np.array(
        [[-0.5 * omega * omega, 0.0, ax], [0.0, -0.5 * omega * omega, ay], [0.0, 0.0, 0.0]]
    )
    center = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    return MotionTrajectory(np.stack([a0 @ center, a1 @ center, a2 @ center]))


def _bilinear(texture: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample texture at real coordinates with edge clamping."""
    th, tw = texture.shape
    uf = np.clip(u, 0.0, tw - 1.0)
    vf = np.clip(v, 0.0, th - 1.0)
    i0 = np.floor(uf).astype(np.int64)
    j0 = np.floor(vf).astype(np.int64)
    i1 = np.minimum(i0 + 1, tw - 1)
    j1 = np.minimum(j0 + 1, th - 1)
    fx = uf - i0
    fy = vf - j0
    top = texture[j0, i0] * (1.0 - fx) + texture[j0, i1] * fx
    bot = texture[j1, i0] * (1.0 - fx) + texture[j1, i1] * fx
    return top * (1.0 - fy) + bot * fy


def render_log_frame(
    scene: PlanarScene,
    trajectory: MotionTrajectory,
    geometry: SensorGeometry,
    t_s: float,
) -> np.ndarray:
    """Render the per-pixel log brightness at time t (seconds)."""
    return _render_log(scene, trajectory, geometry, t_s)


def _render_log(scene, trajectory, geometry, t_s):
    hmat = trajectory.matrix_at(t_s)
    if abs(np.linalg.det(hmat)) < 1e-9:
        raise NumericError(f"trajectory homography degenerate at t={t_s:.6f}s")
    xs = np.arange(geometry.width, dtype=np.float64)[None, :]
    ys = np.arange(geometry.height, dtype=np.float64)[:, None]
    u = hmat[0, 0] * xs + hmat[0, 1] * ys + hmat[0, 2]
    v = hmat[1, 0] * xs + hmat[1, 1] * ys + hmat[1, 2]
    s = hmat[2, 0] * xs + hmat[2, 1] * ys + hmat[2, 2]
    if s.min() <= 1e-9:
        raise NumericError(f"homography projects behind the camera at t={t_s:.6f}s")
    return _bilinear(scene.log_texture, u / s, v / s)


def render_frame(
    scene: PlanarScene,
    trajectory: MotionTrajectory,
    geometry: SensorGeometry,
    t_s: float,
) -> Frame:
    """Render intensity (exp of log brightness) clamped to [0, 1]."""
    log = _render_log(scene, trajectory, geometry, t_s)
    return Frame(np.clip(np.exp(log), 0.0, 1.0), t=round(t_s * US_PER_SECOND))


def events_from_log_frames(log_frames, times_us, thresholds: ContrastThresholds, geometry):
    """Threshold-crossing events from a sequence of rendered log frames.

    ``log_frames`` is an iterable of (H, W) float arrays taken at the integer
    microsecond times ``times_us``. Per pixel, the signal is linear between
    consecutive renders; each crossing of reference +/- threshold emits an
    event at the interpolated time (endpoint crossings belong to the segment
    on their left) and moves the reference to the crossed level.
    """
    times_us = [int(t) for t in times_us]
    it = iter(log_frames)
    try:
        prev = np.asarray(next(it), np.float64).ravel().copy()
    except StopIteration:
        raise DataError("need at least one rendered frame") from None
    ref = prev.copy()
    w = geometry.width
    c_pos, c_neg = thresholds.c_pos, thresholds.c_neg

    out_t, out_pix, out_p = [], [], []

    def emit(cur, sel, counts, step, t0, t1, sign):
        starts = np.cumsum(counts) - counts
        jj = np.arange(int(counts.sum()), dtype=np.int64) - np.repeat(starts, counts) + 1
        pix = np.repeat(sel, counts)
        levels = np.repeat(ref[sel], counts) + jj * step
        l0 = prev[pix]
        l1 = cur[pix]
        frac = (levels - l0) / (l1 - l0)
        tt = np.clip(t0 + frac * (t1 - t0), t0, t1)
        out_t.append(np.rint(tt).astype(np.int64))
        out_pix.append(pix)
        out_p.append(np.full(len(pix), sign, np.int8))

    k = 0
    for cur in it:
        cur = np.asarray(cur, np.float64).ravel()
        t0, t1 = times_us[k], times_us[k + 1]
        if t1 <= t0:
            raise DataError(f"render times must increase (t[{k + 1}] <= t[{k}])")

        n_up = np.floor((cur - ref) / c_pos).astype(np.int64)
        np.maximum(n_up, 0, out=n_up)
        sel = np.nonzero(n_up > 0)[0]
        if len(sel):
            emit(cur, sel, n_up[sel], c_pos, t0, t1, 1)
            ref[sel] += n_up[sel] * c_pos

        n_dn = np.floor((ref - cur) / c_neg).astype(np.int64)
        np.maximum(n_dn, 0, out=n_dn)
        sel = np.nonzero(n_dn > 0)[0]
        if len(sel):
            emit(cur, sel, n_dn[sel], -c_neg, t0, t1, -1)
            ref[sel] -= n_dn[sel] * c_neg

        prev = cur
        k += 1
    if k + 1 != len(times_us):
        raise DataError(f"{k + 1} frames but {len(times_us)} render times")

    if not out_t:
        return EventStream(geometry)
    t = np.concatenate(out_t)
    pix = np.concatenate(out_pix)
    p = np.concatenate(out_p)
    x = (pix % w).astype(np.int32)
    y = (pix // w).astype(np.int32)
    order = np.lexsort((p, x, y, t))
    return EventStream(geometry, t[order], x[order], y[order], p[order])


def generate_events(
    scene: PlanarScene,
    trajectory: MotionTrajectory,
    thresholds: ContrastThresholds,
    config: SimConfig,
):
    """Simulate one sequence: returns (EventStream, ground-truth Frames).

    Ground-truth frames are linear intensity in [0, 1], sampled at gt_rate on
    exact render times (gt_rate divides render_rate).
    """
    g = config.geometry
    n_render = int(round(config.duration_s * config.render_rate))
    if n_render < 1:
        raise DataError("duration too short for the configured render rate")
    times_us = [round(i * US_PER_SECOND / config.render_rate) for i in range(n_render + 1)]
    stride = config.render_rate // config.gt_rate

    gt_frames = []

    def renders():
        for i in range(n_render + 1):
            log = _render_log(scene, trajectory, g, i / config.render_rate)
            if i % stride == 0:
                gt_frames.append(Frame(np.clip(np.exp(log), 0.0, 1.0), t=times_us[i]))
            yield log

    stream = events_from_log_frames(renders(), times_us, thresholds, g)
    return stream, gt_frames


def generate_dataset(
    config: SimConfig,
    out_dir,
    n_sequences: int,
    scene: PlanarScene = None,
) -> DatasetManifest:
    """Simulate ``n_sequences`` and write the dataset layout.

    Per sequence: events.bin, frames/frame_%06d.pgm, timestamps.txt, meta.txt.
    A manifest.txt at the root lists the sequence directories. With no scene
    given, each sequence gets its own procedural noise texture. Fully
    deterministic in config.seed.
    """
    if n_sequences < 1:
        raise DataError("need at least one sequence")
    os.makedirs(out_dir, exist_ok=True)
    children = np.random.SeedSequence(config.seed).spawn(n_sequences)
    g = config.geometry
    tex_side = config.texture_scale * max(g.width, g.height)

    names = []
    for i in range(n_sequences):
        rng = np.random.default_rng(children[i])
        seq_scene = scene
        if seq_scene is None:
            seq_scene = make_noise_texture(
                rng,
                (tex_side, tex_side),
                feature_px=config.texture_feature_px,
                intensity_range=config.intensity_range,
            )
        thresholds = sample_thresholds(
            rng, config.threshold_mean, config.threshold_std, config.threshold_floor
        )
        trajectory = random_trajectory(
            rng, g, seq_scene.log_texture.shape, config.duration_s, config.trajectory
        )
        stream, gt = generate_events(seq_scene, trajectory, thresholds, config)

        name = SEQ_PATTERN % i
        seq_dir = os.path.join(out_dir, name)
        write_video_dir(seq_dir, gt)
        write_events_bin(stream, os.path.join(seq_dir, "events.bin"))
        meta = {
            "sequence": i,
            "width": g.width,
            "height": g.height,
            "duration_us": round(config.duration_s * US_PER_SECOND),
            "render_rate": config.render_rate,
            "gt_rate": config.gt_rate,
            "c_pos": repr(thresholds.c_pos),
            "c_neg": repr(thresholds.c_neg),
            "dataset_seed": config.seed,
            "event_count": len(stream),
        }
        with open(os.path.join(seq_dir, META_NAME), "w") as fh:
            for key, value in meta.items():
                fh.write(f"{key}={value}\n")
        names.append(name)

    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        fh.writelines(name + "\n" for name in names)
    return DatasetManifest(str(out_dir), names)


def load_manifest(root) -> DatasetManifest:
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"{root}: missing {MANIFEST_NAME}")
    with open(path) as fh:
        names = [line.strip() for line in fh if line.strip()]
    if not names:
        raise DataError(f"{root}: empty manifest")
    return DatasetManifest(str(root), names)


def read_meta(seq_dir) -> dict:
    """Parse a sequence meta.txt into a {key: str} dict."""
    meta = {}
    with open(os.path.join(seq_dir, META_NAME)) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                meta[key] = value
    return meta
