import os
import subprocess

import numpy as np
import pytest

from evpipe.cli import _bool, dispatch, parse_size
from evpipe.errors import NumericError
from evpipe.events import read_events_bin, write_event_text


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ds") / "ds"
    code = dispatch([
        "simulate", "--out", str(root), "--sequences", "2", "--duration", "0.4",
        "--size", "24x20", "--render-rate", "250", "--gt-rate", "50", "--seed", "5",
    ])
    assert code == 0
    counts = [
        len(read_events_bin(root / seq / "events.bin"))
        for seq in ("seq_00000", "seq_00001")
    ]
    window = max(2, min(counts) // 5)
    return root, window


# --- parsing helpers ---


def test_parse_size():
    assert parse_size("64x48") == (64, 48)
    assert parse_size("128X96") == (128, 96)
    for bad in ("64", "ax4", "0x4", "4x-2", "4x4x4"):
        with pytest.raises(ValueError):
            parse_size(bad)


def test_bool_values():
    for text in ("1", "true", "YES", "on", True):
        assert _bool(text) is True
    for text in ("0", "false", "No", "off", False):
        assert _bool(text) is False
    with pytest.raises(ValueError):
        _bool("maybe")


# --- exit codes ---


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    assert "SUBCOMMAND" in capsys.readouterr().out
    assert dispatch(["latency", "--help"]) == 0


def test_usage_errors_exit_one(tmp_path):
    assert dispatch([]) == 1
    assert dispatch(["frobnicate"]) == 1
    assert dispatch(["latency", "--no-such-flag"]) == 1
    assert dispatch(["voxelize", "--out", str(tmp_path / "t")]) == 1  # missing --events
    assert dispatch(["latency", "--synthetic", "100", "--threads", "0"]) == 1


def test_data_errors_exit_two(tmp_path, dataset):
    root, _ = dataset
    events = root / "seq_00000" / "events.bin"
    # more events per window than the whole stream holds
    code = dispatch([
        "voxelize", "--events", str(events), "--out", str(tmp_path / "t"),
        "--window", "99999999",
    ])
    assert code == 2
    assert dispatch(["latency", "--events", str(tmp_path / "missing.bin")]) == 2


def test_text_input_needs_geometry(tmp_path, dataset):
    root, window = dataset
    stream = read_events_bin(root / "seq_00000" / "events.bin")
    txt = tmp_path / "events.txt"
    write_event_text(stream, txt)
    assert dispatch(["latency", "--events", str(txt), "--window", str(window)]) == 2
    code = dispatch([
        "latency", "--events", str(txt), "--width", "24", "--height", "20",
        "--window", str(window),
    ])
    assert code == 0


def test_numeric_errors_exit_three(monkeypatch):
    import evpipe.cli as cli

    def boom(a):
        raise NumericError("synthetic failure")

    monkeypatch.setitem(cli._HANDLERS, "latency", boom)
    assert dispatch(["latency", "--synthetic", "100"]) == 3


# --- config files ---


def test_config_file_supplies_defaults(tmp_path, capsys):
    cfg = tmp_path / "lat.cfg"
    cfg.write_text("# latency settings\nsynthetic=50000\nwindow=25000\nrate=1e6\n")
    assert dispatch(["latency", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "median_ms=24.999000" in out


def test_command_line_beats_config(tmp_path, capsys):
    cfg = tmp_path / "lat.cfg"
    cfg.write_text("synthetic=50000\nwindow=25000\n")
    assert dispatch(["latency", "--config", str(cfg), "--window", "10000"]) == 0
    assert "windows=5" in capsys.readouterr().out


def test_config_rejects_unknown_and_reserved_keys(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_option=5\n")
    assert dispatch(["latency", "--config", str(cfg), "--synthetic", "10"]) == 1
    cfg.write_text("config=elsewhere\n")
    assert dispatch(["latency", "--config", str(cfg), "--synthetic", "10"]) == 1
    cfg.write_text("just words\n")
    assert dispatch(["latency", "--config", str(cfg), "--synthetic", "10"]) == 1
    assert dispatch(["latency", "--config", str(tmp_path / "absent.cfg")]) == 1


def test_dump_config_round_trips(tmp_path, capsys):
    args = ["latency", "--synthetic", "12345", "--rate", "2e6", "--size", "32x24"]
    assert dispatch(args + ["--dump-config"]) == 0
    first = capsys.readouterr().out
    assert "synthetic=12345" in first
    assert "window=25000" in first  # default filled in

    cfg = tmp_path / "dumped.cfg"
    cfg.write_text(first)
    assert dispatch(["latency", "--config", str(cfg), "--dump-config"]) == 0
    assert capsys.readouterr().out == first


# --- thread plumbing ---


def test_threads_env_applied(monkeypatch, capsys):
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    assert dispatch(["latency", "--synthetic", "30000", "--threads", "2"]) == 0
    assert os.environ["OPENBLAS_NUM_THREADS"] == "2"
    assert os.environ["OMP_NUM_THREADS"] == "2"


def test_threads_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("EVPIPE_THREADS", "3")
    assert dispatch(["latency", "--synthetic", "30000", "--dump-config"]) == 0
    assert "threads=3" in capsys.readouterr().out
    monkeypatch.setenv("EVPIPE_THREADS", "lots")
    assert dispatch(["latency", "--synthetic", "30000"]) == 1


# --- pipeline subcommands ---


def test_reconstruct_and_eval(dataset, tmp_path, capsys):
    root, window = dataset
    recon_root = tmp_path / "recon"
    for seq in ("seq_00000", "seq_00001"):
        for method in ("integrate", "highpass"):
            code = dispatch([
                "reconstruct", "--events", str(root / seq / "events.bin"),
                "--method", method, "--out", str(tmp_path / method / seq),
                "--window", str(window),
            ])
            assert code == 0
    capsys.readouterr()

    csv_path = tmp_path / "table.csv"
    code = dispatch([
        "eval", "--gt", str(root),
        "--recon", f"integrate={tmp_path / 'integrate'}",
        "--recon", f"highpass={tmp_path / 'highpass'}",
        "--tolerance", "4000", "--warmup", "1", "--csv", str(csv_path),
    ])
    assert code == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[0].split()[:3] == ["sequence", "integrate:mse", "integrate:ssim"]
    assert lines[1].startswith("seq_00000")
    assert any(line.startswith("Mean") for line in lines)
    assert out.count("*") >= 4  # a winner per row and metric
    assert csv_path.read_text().splitlines()[0] == "sequence,method,mse,ssim,frames"


def test_eval_duplicate_label_rejected(dataset, tmp_path):
    root, _ = dataset
    code = dispatch([
        "eval", "--gt", str(root),
        "--recon", f"a={tmp_path}", "--recon", f"a={tmp_path}",
    ])
    assert code == 1
    assert dispatch(["eval", "--gt", str(root), "--recon", "nodir"]) == 1


def test_train_then_reconstruct_e2v(dataset, tmp_path, capsys):
    root, window = dataset
    weights = tmp_path / "net.e2vw"
    code = dispatch([
        "train", "--data", str(root), "--out", str(weights),
        "--bins", "3", "--recurrent-frames", "1", "--base-channels", "2",
        "--num-encoders", "2", "--num-residual", "0", "--epochs", "1",
        "--batch-size", "2", "--unroll", "2", "--window", str(window),
        "--max-chunks", "2", "--lr", "1e-3",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "epoch 1/1 loss " in out and "lr 1.000e-03" in out
    assert weights.exists()

    code = dispatch([
        "reconstruct", "--events", str(root / "seq_00000" / "events.bin"),
        "--method", "e2v", "--out", str(tmp_path / "e2v_out"),
        "--window", str(window), "--weights", str(weights), "--bins", "3",
    ])
    assert code == 0
    assert (tmp_path / "e2v_out" / "timestamps.txt").exists()

    # declared shape must match the weight file
    code = dispatch([
        "reconstruct", "--events", str(root / "seq_00000" / "events.bin"),
        "--method", "e2v", "--out", str(tmp_path / "bad"),
        "--window", str(window), "--weights", str(weights),
        "--recurrent-frames", "7",
    ])
    assert code == 2
    assert dispatch([
        "reconstruct", "--events", str(root / "seq_00000" / "events.bin"),
        "--method", "e2v", "--out", str(tmp_path / "bad"),
        "--window", str(window),
    ]) == 2  # no --weights


def test_train_quiet_suppresses_progress(dataset, tmp_path, capsys):
    root, window = dataset
    code = dispatch([
        "train", "--data", str(root), "--out", str(tmp_path / "net.e2vw"),
        "--bins", "2", "--recurrent-frames", "0", "--base-channels", "2",
        "--num-encoders", "2", "--num-residual", "0", "--epochs", "1",
        "--batch-size", "2", "--unroll", "2", "--window", str(window),
        "--max-chunks", "1", "--quiet",
    ])
    assert code == 0
    assert "epoch" not in capsys.readouterr().out.splitlines()[0]


def test_voxelize_writes_tensor(dataset, tmp_path, capsys):
    root, window = dataset
    out = tmp_path / "window0.evt"
    code = dispatch([
        "voxelize", "--events", str(root / "seq_00000" / "events.bin"),
        "--out", str(out), "--window", str(window), "--bins", "4",
    ])
    assert code == 0
    assert out.stat().st_size > 0
    assert "wrote window 0" in capsys.readouterr().out
    code = dispatch([
        "voxelize", "--events", str(root / "seq_00000" / "events.bin"),
        "--out", str(out), "--window", str(window), "--index", "999",
    ])
    assert code == 2


def test_bench_reports_all_stages(capsys):
    code = dispatch([
        "bench", "--synthetic", "60000", "--window", "20000",
        "--stage", "all", "--reps", "1", "--size", "32x32",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "voxelize: " in out and "highpass: " in out
    assert "Mev/s" in out and "ms/frame" in out


def test_latency_synthetic_quantiles(capsys):
    code = dispatch(["latency", "--synthetic", "100000", "--rate", "1e6"])
    assert code == 0
    out = capsys.readouterr().out
    assert "windows=4" in out
    assert "min_ms=24.999000" in out
    assert "max_ms=24.999000" in out


# --- installed entry point ---


def test_console_script_determinism(tmp_path):
    args = [
        "evpipe", "simulate", "--sequences", "1", "--duration", "0.3",
        "--size", "16x12", "--render-rate", "250", "--gt-rate", "50", "--seed", "11",
    ]
    for sub in ("a", "b"):
        proc = subprocess.run(
            args + ["--out", str(tmp_path / sub)], capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
        assert "wrote 1 sequences" in proc.stdout
    pa = (tmp_path / "a" / "seq_00000" / "events.bin").read_bytes()
    pb = (tmp_path / "b" / "seq_00000" / "events.bin").read_bytes()
    assert pa == pb and len(pa) > 16
