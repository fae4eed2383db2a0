"""Command-line entry point.

One binary, seven subcommands: simulate, voxelize, reconstruct, train,
eval, bench, latency. Exit codes: 0 success, 1 usage error, 2 bad or
inconsistent data, 3 numeric failure.

Any flag may also come from a key=value config file (``--config``);
command-line values win. ``--dump-config`` prints the merged settings in
config-file syntax and exits. ``--threads`` (or EVPIPE_THREADS) caps BLAS
threading and defaults to 1 so results are reproducible; it takes effect
only at process start, before numpy is first imported.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from .errors import DataError, NumericError

_THREAD_ENV_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the contract here is exit 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _size(text: str) -> str:
    parse_size(text)
    return text


def parse_size(text: str):
    """'WxH' -> (width, height)."""
    parts = str(text).lower().split("x")
    try:
        w, h = (int(p) for p in parts)
    except ValueError:
        raise ValueError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise ValueError(f"expected positive WxH, got {text!r}")
    return w, h


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class _Opt:
    name: str  # flag without leading dashes
    type: object = str
    default: object = None
    help: str = ""
    flag: bool = False  # boolean switch
    repeat: bool = False  # may be given multiple times
    required: bool = False  # checked after the config merge
    choices: tuple = None
    metavar: str = None

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_COMMON = [
    _Opt("config", help="key=value file supplying defaults for any flag"),
    _Opt("dump-config", flag=True, default=False,
         help="print the effective configuration and exit"),
    _Opt("threads", type=int, default=None, metavar="N",
         help="BLAS thread cap; default 1 (reproducible). "
              "EVPIPE_THREADS is the fallback."),
]

_EVENT_INPUT = [
    _Opt("events", required=True, metavar="PATH",
         help="event file (binary, or 't x y p' text)"),
    _Opt("width", type=int, metavar="W",
         help="sensor width (text event input only)"),
    _Opt("height", type=int, metavar="H",
         help="sensor height (text event input only)"),
]

_SYNTH_INPUT = [
    _Opt("events", metavar="PATH",
         help="event file (binary, or 't x y p' text)"),
    _Opt("width", type=int, metavar="W",
         help="sensor width (text event input only)"),
    _Opt("height", type=int, metavar="H",
         help="sensor height (text event input only)"),
    _Opt("synthetic", type=int, metavar="N",
         help="generate N constant-rate random events instead of reading a file"),
    _Opt("rate", type=float, default=1e6, metavar="EV_S",
         help="synthetic event rate in events/second"),
    _Opt("size", type=_size, default="64x64", metavar="WxH",
         help="synthetic sensor size"),
    _Opt("seed", type=int, default=0, help="synthetic pixel placement seed"),
]

_SUBCOMMANDS = {
    "simulate": {
        "help": "render a moving planar scene into event/frame sequences",
        "opts": [
            _Opt("out", required=True, metavar="DIR", help="dataset output directory"),
            _Opt("sequences", type=int, default=8, metavar="N",
                 help="number of sequences to simulate"),
            _Opt("duration", type=float, default=2.0, metavar="SECONDS",
                 help="length of each sequence"),
            _Opt("size", type=_size, default="64x64", metavar="WxH",
                 help="sensor resolution"),
            _Opt("seed", type=int, default=0, help="master seed"),
            _Opt("render-rate", type=int, default=500, metavar="HZ",
                 help="brightness render rate"),
            _Opt("gt-rate", type=int, default=125, metavar="HZ",
                 help="ground-truth frame rate (must divide render rate)"),
            _Opt("threshold-mean", type=float, default=0.18,
                 help="mean contrast threshold"),
            _Opt("threshold-std", type=float, default=0.03,
                 help="contrast threshold spread across sequences"),
        ],
    },
    "voxelize": {
        "help": "dump one event window as a space-time tensor (debug aid)",
        "opts": _EVENT_INPUT + [
            _Opt("out", required=True, metavar="PATH", help="tensor output file"),
            _Opt("bins", type=int, default=10, metavar="B", help="temporal bins"),
            _Opt("window", type=int, default=25000, metavar="N",
                 help="events per window"),
            _Opt("index", type=int, default=0, metavar="I",
                 help="which window to dump"),
        ],
    },
    "reconstruct": {
        "help": "turn an event stream into a frame sequence",
        "opts": _EVENT_INPUT + [
            _Opt("method", required=True, choices=("integrate", "highpass", "e2v"),
                 help="reconstruction method"),
            _Opt("out", required=True, metavar="DIR",
                 help="output directory (frames/ + timestamps.txt)"),
            _Opt("window", type=int, default=25000, metavar="N",
                 help="events per output frame"),
            _Opt("weights", metavar="PATH", help="weight file (e2v only)"),
            _Opt("bins", type=int, metavar="B",
                 help="expected voxel bins; must match the weight file"),
            _Opt("recurrent-frames", type=int, metavar="K",
                 help="expected recurrent frame count; must match the weight file"),
            _Opt("threshold", type=float, default=0.18,
                 help="contrast step for the filter methods"),
            _Opt("alpha", type=float, default=31.41592653589793, metavar="RAD_S",
                 help="high-pass cutoff (angular)"),
            _Opt("bilateral", flag=True, default=False,
                 help="smooth each output frame with a 5x5 bilateral filter"),
        ],
    },
    "train": {
        "help": "fit the recurrent reconstruction network on a simulated dataset",
        "opts": [
            _Opt("data", required=True, metavar="DIR",
                 help="dataset root (holds manifest.txt)"),
            _Opt("out", required=True, metavar="PATH", help="weight output file"),
            _Opt("bins", type=int, default=10, metavar="B", help="voxel bins"),
            _Opt("recurrent-frames", type=int, default=3, metavar="K",
                 help="previous reconstructions fed back to the network"),
            _Opt("base-channels", type=int, default=64, help="first encoder width"),
            _Opt("num-encoders", type=int, default=4, help="encoder stages"),
            _Opt("num-residual", type=int, default=2, help="residual blocks"),
            _Opt("epochs", type=int, default=40),
            _Opt("batch-size", type=int, default=16),
            _Opt("lr", type=float, default=1e-4, help="base learning rate"),
            _Opt("lr-decay", type=float, default=0.9,
                 help="multiplicative decay factor"),
            _Opt("lr-decay-every", type=int, default=10, metavar="EPOCHS"),
            _Opt("unroll", type=int, default=8, metavar="L",
                 help="windows per training sample"),
            _Opt("window", type=int, default=25000, metavar="N",
                 help="events per window"),
            _Opt("seed", type=int, default=0, help="init + shuffling seed"),
            _Opt("ssim-weight", type=float, default=0.5,
                 help="structural term weight in the loss"),
            _Opt("max-chunks", type=int, default=0, metavar="M",
                 help="cap unroll samples per sequence (0 = all)"),
            _Opt("checkpoint-every", type=int, default=0, metavar="EPOCHS",
                 help="checkpoint cadence (0 = off)"),
            _Opt("checkpoint-dir", metavar="DIR", help="checkpoint directory"),
            _Opt("quiet", flag=True, default=False,
                 help="suppress per-epoch progress lines"),
        ],
    },
    "eval": {
        "help": "score reconstructions against ground truth",
        "opts": [
            _Opt("gt", required=True, metavar="DIR",
                 help="dataset root (manifest.txt) or a single sequence directory"),
            _Opt("recon", repeat=True, required=True, metavar="LABEL=DIR",
                 help="reconstruction directory, tagged; repeatable"),
            _Opt("warmup", type=int, default=0, metavar="N",
                 help="ground-truth frames dropped at the start"),
            _Opt("tail", type=int, default=0, metavar="N",
                 help="ground-truth frames dropped at the end"),
            _Opt("tolerance", type=int, default=1000, metavar="US",
                 help="max |recon - gt| timestamp gap for a match"),
            _Opt("csv", metavar="PATH", help="also write the table as CSV"),
        ],
    },
    "bench": {
        "help": "measure single-thread event throughput",
        "opts": _SYNTH_INPUT + [
            _Opt("stage", choices=("voxelize", "highpass", "all"), default="all",
                 help="pipeline stage to time"),
            _Opt("window", type=int, default=25000, metavar="N",
                 help="events per window"),
            _Opt("bins", type=int, default=10, metavar="B", help="temporal bins"),
            _Opt("reps", type=int, default=3, help="median over this many runs"),
        ],
    },
    "latency": {
        "help": "report frame latency quantiles under fixed-count windowing",
        "opts": _SYNTH_INPUT + [
            _Opt("window", type=int, default=25000, metavar="N",
                 help="events per window"),
        ],
    },
}


def _add_opts(parser: argparse.ArgumentParser, opts) -> None:
    for o in opts:
        kwargs = {"dest": o.dest, "default": argparse.SUPPRESS, "help": o.help}
        if o.flag:
            kwargs["action"] = "store_true"
        else:
            kwargs["type"] = o.type
            if o.repeat:
                kwargs["action"] = "append"
            if o.choices:
                kwargs["choices"] = list(o.choices)
            if o.metavar:
                kwargs["metavar"] = o.metavar
        parser.add_argument(f"--{o.name}", **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="evpipe",
        description="Event-stream simulation, reconstruction, and evaluation.",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True
    for name, spec in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=spec["help"], description=spec["help"])
        _add_opts(p, spec["opts"] + _COMMON)
    return parser


def _all_opts(subcommand: str):
    return _SUBCOMMANDS[subcommand]["opts"] + _COMMON


def read_config_file(path, opts) -> dict:
    """Parse key=value lines; keys name flags (dashes or underscores)."""
    by_dest = {o.dest: o for o in opts}
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise _UsageError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(lines, 1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        key, sep, value = text.partition("=")
        if not sep:
            raise _UsageError(f"{path}:{lineno}: expected key=value, got {text!r}")
        dest = key.strip().replace("-", "_")
        value = value.strip()
        if dest in ("config", "dump_config"):
            raise _UsageError(f"{path}:{lineno}: {key.strip()!r} is not allowed here")
        opt = by_dest.get(dest)
        if opt is None:
            raise _UsageError(f"{path}:{lineno}: unknown option {key.strip()!r}")
        try:
            if opt.flag:
                values[dest] = _bool(value)
            elif opt.repeat:
                values[dest] = [opt.type(v) for v in value.split()]
            else:
                parsed = opt.type(value)
                if opt.choices and parsed not in opt.choices:
                    raise ValueError(f"must be one of {', '.join(opt.choices)}")
                values[dest] = parsed
        except ValueError as exc:
            raise _UsageError(f"{path}:{lineno}: bad value for {key.strip()!r}: {exc}")
    return values


def effective_config(subcommand: str, given: dict) -> dict:
    """defaults < config file < command line."""
    opts = _all_opts(subcommand)
    eff = {o.dest: o.default for o in opts}
    path = given.get("config")
    if path:
        eff.update(read_config_file(path, opts))
    eff.update(given)
    for o in opts:
        if o.required and eff.get(o.dest) in (None, []):
            raise _UsageError(f"missing required option --{o.name}")
    return eff


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return " ".join(str(v) for v in value)
    return str(value)


def dump_config(subcommand: str, eff: dict) -> str:
    lines = [f"# evpipe {subcommand}"]
    for o in sorted(_all_opts(subcommand), key=lambda o: o.dest):
        if o.dest in ("config", "dump_config"):
            continue
        value = eff.get(o.dest)
        if value is None:
            continue
        lines.append(f"{o.dest}={_format_value(value)}")
    return "\n".join(lines)


def _resolve_threads(eff: dict) -> int:
    n = eff.get("threads")
    if n is None:
        raw = os.environ.get("EVPIPE_THREADS", "").strip()
        if raw:
            try:
                n = int(raw)
            except ValueError:
                raise _UsageError(f"EVPIPE_THREADS must be an integer, got {raw!r}")
        else:
            n = 1
    if n < 1:
        raise _UsageError(f"thread count must be >= 1, got {n}")
    return n


def _apply_threads(n: int) -> None:
    # Only effective if numpy has not been imported yet in this process.
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(n)


class _Args:
    def __init__(self, values: dict):
        self.__dict__.update(values)


# ---------------------------------------------------------------------------
# input helpers


def _load_events(path, width, height):
    from .events import BINARY_MAGIC, SensorGeometry, parse_event_text, read_events_bin

    try:
        with open(path, "rb") as fh:
            head = fh.read(len(BINARY_MAGIC))
    except OSError as exc:
        raise DataError(f"cannot read event file: {exc}")
    if head == BINARY_MAGIC:
        return read_events_bin(path)
    if width is None or height is None:
        raise DataError("text event input needs --width and --height")
    return parse_event_text(path, SensorGeometry(width, height))


def _synthetic_stream(count, rate, size, seed):
    import numpy as np

    from .events import EventStream, SensorGeometry

    if count < 1:
        raise DataError("synthetic stream needs at least one event")
    if rate <= 0:
        raise DataError("synthetic event rate must be positive")
    w, h = parse_size(size)
    geometry = SensorGeometry(w, h)
    rng = np.random.default_rng(seed)
    t = np.floor(np.arange(count) * (1e6 / rate)).astype(np.int64)
    return EventStream(
        geometry=geometry,
        t=t,
        x=rng.integers(0, w, count, np.int32),
        y=rng.integers(0, h, count, np.int32),
        p=np.where(rng.random(count) < 0.5, -1, 1).astype(np.int8),
    )


def _input_stream(a):
    if getattr(a, "synthetic", None) is not None:
        return _synthetic_stream(a.synthetic, a.rate, a.size, a.seed)
    if a.events is None:
        raise _UsageError("need --events or --synthetic")
    return _load_events(a.events, a.width, a.height)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_simulate(a) -> None:
    from .events import SensorGeometry
    from .simulate import SimConfig, generate_dataset

    w, h = parse_size(a.size)
    config = SimConfig(
        geometry=SensorGeometry(w, h),
        duration_s=a.duration,
        render_rate=a.render_rate,
        gt_rate=a.gt_rate,
        threshold_mean=a.threshold_mean,
        threshold_std=a.threshold_std,
        seed=a.seed,
    )
    manifest = generate_dataset(config, a.out, a.sequences)
    print(f"wrote {len(manifest.sequences)} sequences under {a.out}")


def _cmd_voxelize(a) -> None:
    from .events import window_by_count
    from .voxel import voxelize, write_tensor

    stream = _load_events(a.events, a.width, a.height)
    windows = window_by_count(stream, a.window)
    if not windows:
        raise DataError(
            f"stream of {len(stream)} events has no complete {a.window}-event window"
        )
    if not 0 <= a.index < len(windows):
        raise DataError(f"window index {a.index} out of range [0, {len(windows)})")
    tensor = voxelize(windows[a.index], a.bins)
    write_tensor(a.out, tensor)
    print(
        f"wrote window {a.index} ({a.bins}x{tensor.geometry.height}"
        f"x{tensor.geometry.width} tensor, mass {tensor.values.sum():+.1f}) to {a.out}"
    )


def _cmd_reconstruct(a) -> None:
    from .frames import write_video_dir
    from .reconstruct import reconstruct_video

    weights = None
    if a.method == "e2v":
        if a.weights is None:
            raise DataError("--method e2v needs --weights")
        from .net.weights_io import load_weights

        weights = load_weights(a.weights)
        if a.bins is not None and a.bins != weights.config.bins:
            raise DataError(
                f"--bins {a.bins} does not match the weight file "
                f"({weights.config.bins})"
            )
        if (
            a.recurrent_frames is not None
            and a.recurrent_frames != weights.config.recurrent_frames
        ):
            raise DataError(
                f"--recurrent-frames {a.recurrent_frames} does not match the "
                f"weight file ({weights.config.recurrent_frames})"
            )
    stream = _load_events(a.events, a.width, a.height)
    frames = reconstruct_video(
        stream,
        a.method,
        a.window,
        weights=weights,
        threshold=a.threshold,
        alpha=a.alpha,
        bilateral=a.bilateral,
    )
    write_video_dir(a.out, frames)
    print(f"wrote {len(frames)} frames to {a.out}")


def _cmd_train(a) -> None:
    from .net.train import TrainConfig, train
    from .net.unet import NetConfig
    from .net.weights_io import save_weights

    net_config = NetConfig(
        bins=a.bins,
        recurrent_frames=a.recurrent_frames,
        base_channels=a.base_channels,
        num_encoders=a.num_encoders,
        num_residual=a.num_residual,
    )
    config = TrainConfig(
        epochs=a.epochs,
        batch_size=a.batch_size,
        learning_rate=a.lr,
        lr_decay=a.lr_decay,
        lr_decay_every=a.lr_decay_every,
        unroll=a.unroll,
        window=a.window,
        seed=a.seed,
        ssim_weight=a.ssim_weight,
        max_chunks_per_seq=a.max_chunks,
        checkpoint_every=a.checkpoint_every,
    )

    def progress(epoch, loss, lr):
        if not a.quiet:
            print(f"epoch {epoch + 1}/{a.epochs} loss {loss:.6f} lr {lr:.3e}")
            sys.stdout.flush()

    result = train(
        a.data, net_config, config, progress=progress, checkpoint_dir=a.checkpoint_dir
    )
    save_weights(result.weights, a.out)
    print(
        f"trained {result.weights.param_count()} parameters on {result.n_samples} "
        f"samples; wrote {a.out}"
    )


def _parse_recon_spec(spec: str):
    label, sep, path = spec.partition("=")
    if not sep or not label or not path:
        raise _UsageError(f"--recon expects LABEL=DIR, got {spec!r}")
    return label, path


def _cmd_eval(a) -> None:
    from .frames import read_video_dir
    from .metrics import aggregate_table, evaluate_sequence
    from .simulate import MANIFEST_NAME, load_manifest

    labeled = [_parse_recon_spec(s) for s in a.recon]
    seen = set()
    for label, _ in labeled:
        if label in seen:
            raise _UsageError(f"duplicate --recon label {label!r}")
        seen.add(label)

    if os.path.isfile(os.path.join(a.gt, MANIFEST_NAME)):
        manifest = load_manifest(a.gt)
        names = list(manifest.sequences)
        gt_dirs = manifest.sequence_dirs()
        recon_dir = {
            (label, name): os.path.join(root, name)
            for label, root in labeled
            for name in names
        }
    else:
        names = [os.path.basename(os.path.normpath(a.gt))]
        gt_dirs = [a.gt]
        recon_dir = {(label, names[0]): root for label, root in labeled}

    results = {label: [] for label, _ in labeled}
    for name, gt_dir in zip(names, gt_dirs):
        gt_frames = read_video_dir(gt_dir)
        for label, _ in labeled:
            recon_frames = read_video_dir(recon_dir[(label, name)])
            results[label].append(
                evaluate_sequence(
                    recon_frames,
                    gt_frames,
                    tolerance_us=a.tolerance,
                    warmup=a.warmup,
                    tail=a.tail,
                )
            )
    table = aggregate_table(names, results)
    print(table.render_text())
    if a.csv:
        with open(a.csv, "w", encoding="utf-8") as fh:
            fh.write(table.render_csv())
        print(f"wrote {a.csv}")


def _cmd_bench(a) -> None:
    from .events import window_by_count
    from .metrics import throughput_bench
    from .reconstruct import HighpassState, highpass_run, state_to_frame
    from .voxel import voxelize

    stream = _input_stream(a)
    windows = window_by_count(stream, a.window)
    if not windows:
        raise DataError(
            f"stream of {len(stream)} events has no complete {a.window}-event window"
        )
    n_events = len(windows) * a.window
    from_file = getattr(a, "synthetic", None) is None
    reports = []

    if a.stage in ("voxelize", "all"):
        if from_file:
            # Time the full ingest path: decode the file, then voxelize.
            def run_voxelize():
                s = _load_events(a.events, a.width, a.height)
                for wnd in window_by_count(s, a.window):
                    voxelize(wnd, a.bins)

            label = "parse+voxelize"
        else:

            def run_voxelize():
                for wnd in windows:
                    voxelize(wnd, a.bins)

            label = "voxelize"
        reports.append(
            throughput_bench(run_voxelize, n_events, len(windows), a.reps, method=label)
        )

    if a.stage in ("highpass", "all"):

        def run_highpass():
            state = HighpassState.zeros(stream.geometry, t0=windows[0].t0)
            for wnd in windows:
                highpass_run(state, wnd.events)
                state_to_frame(state, wnd.t_last)

        reports.append(
            throughput_bench(run_highpass, n_events, len(windows), a.reps, method="highpass")
        )

    for r in reports:
        print(
            f"{r.method}: {r.mev_per_s:.2f} Mev/s, {r.frame_ms:.3f} ms/frame "
            f"({r.events} events, {r.reps} reps)"
        )


def _cmd_latency(a) -> None:
    from .metrics import latency_report

    stream = _input_stream(a)
    report = latency_report(stream, a.window)
    print("\n".join(report.as_lines()))


_HANDLERS = {
    "simulate": _cmd_simulate,
    "voxelize": _cmd_voxelize,
    "reconstruct": _cmd_reconstruct,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "latency": _cmd_latency,
}


def dispatch(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    given = {k: v for k, v in vars(ns).items() if k != "subcommand"}
    try:
        eff = effective_config(ns.subcommand, given)
        threads = _resolve_threads(eff)
    except _UsageError as exc:
        print(f"evpipe {ns.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    eff["threads"] = threads
    if eff.get("dump_config"):
        print(dump_config(ns.subcommand, eff))
        return 0
    _apply_threads(threads)
    try:
        _HANDLERS[ns.subcommand](_Args(eff))
    except _UsageError as exc:
        print(f"evpipe {ns.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"evpipe {ns.subcommand}: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"evpipe {ns.subcommand}: numeric error: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
