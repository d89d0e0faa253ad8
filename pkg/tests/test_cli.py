import subprocess
import sys

import numpy as np
import pytest

from drdn import checkpoint
from drdn.cli import main, read_config_file
from drdn.data import load_image, save_image, synthetic_image, write_synthetic_dataset
from drdn.network import NetworkConfig, build
from drdn.tensor_core import Rng

SUBCOMMANDS = ["rf-table", "param-count", "train", "denoise", "eval", "dump-features"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rf_column(out):
    return [int(line.split("\t")[2]) for line in out.strip().splitlines()[1:]]


@pytest.fixture
def zero_ckpt(tmp_path):
    path = tmp_path / "zero.drdn"
    checkpoint.save(build(NetworkConfig(depth=4, feature_width=3, io_channels=1, patch_size=16), init=False), path)
    return path


@pytest.fixture
def gray_image(tmp_path):
    path = tmp_path / "in.pgm"
    save_image(synthetic_image(24, Rng(0)), path)
    return path


def test_rf_table_presets(capsys):
    code, out, _ = run(capsys, "rf-table", "--preset", "gray10")
    assert code == 0
    assert rf_column(out) == [3, 7, 11, 15, 19, 23, 27, 31, 35, 37]
    assert out.splitlines()[0].split("\t") == ["layer", "dilation", "receptive_field", "output_size"]
    _, out, _ = run(capsys, "rf-table", "--preset", "dncnn17")
    assert rf_column(out) == list(range(3, 36, 2))
    _, out, _ = run(capsys, "rf-table", "--preset", "color12")
    assert rf_column(out)[-1] == 45


def test_rf_table_stack(capsys):
    code, out, _ = run(capsys, "rf-table", "--stack", "3:1:1:1")
    assert code == 0 and rf_column(out) == [3]


def test_rf_table_parse_error(capsys):
    code, _, err = run(capsys, "rf-table", "--stack", "3:1:1:1,3:q:1:2")
    assert code == 2 and "column 11" in err


def test_param_count(capsys):
    assert run(capsys, "param-count", "--preset", "gray")[1].strip() == "297153"
    assert run(capsys, "param-count", "--preset", "color")[1].strip() == "373443"
    assert run(capsys, "param-count", "--depth", "3", "--width", "1", "--channels", "1")[1].strip() == "31"


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_exits_zero_and_shows_defaults(command):
    proc = subprocess.run([sys.executable, "-m", "drdn.cli", command, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "usage:" in proc.stdout
    if command == "train":
        for flag in ("--momentum", "--weight-decay", "--batch-size", "--lr", "--epochs"):
            assert flag in proc.stdout
        assert "(default: 0.9)" in proc.stdout and "(default: 128)" in proc.stdout


def test_sigma_and_blind_are_exclusive(capsys, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--data", str(tmp_path), "--sigma", "25", "--blind", "0:55", "--out", str(tmp_path / "m")])
    assert info.value.code == 1 and "not allowed with" in capsys.readouterr().err


def test_usage_errors_exit_one(capsys, tmp_path):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 1
    code, _, _ = run(capsys, "train", "--data", str(tmp_path), "--out", str(tmp_path / "m"))
    assert code == 1
    code, _, _ = run(capsys, "denoise", "--in", "x.pgm", "--out", "y.pgm")
    assert code == 1
    with pytest.raises(SystemExit) as info:
        main(["train", "--blind", "55:0"])
    assert info.value.code == 1


def test_train_missing_data_exits_two(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--data", str(tmp_path / "nope"), "--sigma", "25",
                       "--out", str(tmp_path / "m"))
    assert code == 2


def test_denoise_zero_checkpoint_is_identity(capsys, tmp_path, zero_ckpt, gray_image):
    out = tmp_path / "out.pgm"
    code, stdout, _ = run(capsys, "denoise", "--model", str(zero_ckpt), "--in", str(gray_image), "--out", str(out))
    assert code == 0 and stdout == ""
    assert out.read_bytes() == gray_image.read_bytes()


def test_denoise_channel_mismatch(capsys, tmp_path, zero_ckpt):
    color = tmp_path / "c.ppm"
    save_image(synthetic_image(16, Rng(0), channels=3), color)
    code, _, err = run(capsys, "denoise", "--model", str(zero_ckpt), "--in", str(color), "--out", str(tmp_path / "o.ppm"))
    assert code == 2 and "channels" in err


def test_denoise_corrupt_checkpoint(capsys, tmp_path, zero_ckpt, gray_image):
    data = bytearray(zero_ckpt.read_bytes())
    data[-1] ^= 0xFF
    bad = tmp_path / "bad.drdn"
    bad.write_bytes(bytes(data))
    code, _, err = run(capsys, "denoise", "--model", str(bad), "--in", str(gray_image), "--out", str(tmp_path / "o.pgm"))
    assert code == 2 and "ChecksumError" in err


def test_dump_features(capsys, tmp_path, zero_ckpt, gray_image):
    out = tmp_path / "fmap.pgm"
    code, _, _ = run(capsys, "dump-features", "--model", str(zero_ckpt), "--in", str(gray_image),
                     "--layer", "3", "--out", str(out))
    assert code == 0
    fmap = load_image(out)
    assert fmap.channels == 1 and np.ptp(fmap.pixels) == 0
    code, _, err = run(capsys, "dump-features", "--model", str(zero_ckpt), "--in", str(gray_image),
                       "--layer", "99", "--out", str(out))
    assert code == 2 and "IndexOutOfRange" in err


def test_eval_report(capsys, tmp_path, zero_ckpt):
    root = write_synthetic_dataset(tmp_path / "data", n_train=1, n_test=3, size=20)
    report = tmp_path / "report.tsv"
    code, out, _ = run(capsys, "eval", "--model", str(zero_ckpt), "--data", str(root), "--sigma", "25",
                       "--out", str(report))
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("MEAN\t")
    for line in lines:
        name, sigma, noisy, denoised = line.split("\t")
        assert noisy == denoised
    assert report.read_text() == out
    code, out2, _ = run(capsys, "eval", "--model", str(zero_ckpt), "--data", str(root), "--sigma", "25")
    assert out2 == out


def test_train_tiny_run_and_config_file(capsys, tmp_path):
    root = write_synthetic_dataset(tmp_path / "data", n_train=2, n_test=1, size=24)
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "# tiny run\n"
        "sigma = 25\n"
        "depth = 3\n"
        "width = 2\n"
        "patch-size = 16\n"
        "patches = 8\n"
        "batch_size = 4\n"
        "epochs = 2\n"
        "lr = 1e-5\n"
        "lr-reduced = 1e-6\n"
        "seed = 3\n"
    )
    out = tmp_path / "m.drdn"
    code, stdout, _ = run(capsys, "train", "--config", str(cfg), "--data", str(root), "--out", str(out),
                          "--epochs", "3")
    assert code == 0
    trace = (tmp_path / "m.drdn.loss.tsv").read_text()
    assert trace == stdout
    rows = [line.split("\t") for line in trace.splitlines()]
    assert [r[0] for r in rows] == ["0", "1", "2"]  # flag overrides file
    assert [r[2] for r in rows] == ["1e-05", "1e-05", "1e-06"]
    model = checkpoint.load(out)
    assert model.config.depth == 3 and model.config.feature_width == 2


def test_config_file_parsing(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("a = 1\n\n# note\nweight-decay = 0.5  # inline\n")
    assert read_config_file(path) == {"a": "1", "weight_decay": "0.5"}


def test_config_file_unknown_key(capsys, tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("colour = 3\n")
    code, _, err = run(capsys, "train", "--config", str(path), "--data", str(tmp_path), "--sigma", "5",
                       "--out", str(tmp_path / "m"))
    assert code == 1 and "colour" in err


def test_thread_cap_env(capsys, monkeypatch):
    monkeypatch.setenv("DRDN_THREADS", "1")
    code, out, _ = run(capsys, "param-count")
    assert code == 0 and out.strip() == "297153"
