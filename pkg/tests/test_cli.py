import csv
from dataclasses import fields

import pytest

from capsroute import cli, training
from capsroute.config import RunConfig
from capsroute.layers import read_checkpoint_header


def quick_flags(data_dir, run_root, *extra):
    return ["--preset", "desk_mnist", "--data-dir", str(data_dir), "--run-root", str(run_root),
            "--max-steps", "3", "--train-subset", "40", "--test-subset", "20", "--batch-size", "8",
            "--checkpoint-every", "2", "--log-every", "1", *extra]


@pytest.fixture(scope="module")
def trained_run(desk_mnist_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    assert cli.run(["train", *quick_flags(desk_mnist_dir, root)]) == 0
    (run_dir,) = root.iterdir()
    return run_dir


def test_every_flag_is_a_config_key():
    names = {f.name for f in fields(RunConfig)}
    assert set(cli._CONFIG_FLAGS) <= names
    for key, kind in cli._CONFIG_FLAGS.items():
        assert RunConfig.__dataclass_fields__[key].type == kind.__name__


def test_train_run_directory(trained_run):
    config = RunConfig.from_preset("desk_mnist", max_steps=3, train_subset=40, test_subset=20,
                                   batch_size=8, checkpoint_every=2, log_every=1)
    assert trained_run.name.startswith(config.config_hash() + "-")
    echoed = (trained_run / "config.txt").read_text()
    assert "max_steps = 3" in echoed and "train_subset = 40" in echoed
    assert sorted(p.name for p in trained_run.glob("ckpt-*.bin")) == ["ckpt-0000002.bin", "ckpt-0000003.bin"]
    assert read_checkpoint_header(trained_run / "ckpt-0000003.bin")[0]["config_hash"] == config.config_hash()
    with open(trained_run / "train_log.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3


def test_eval_writes_error_rate(trained_run, desk_mnist_dir, tmp_path, capsys):
    code = cli.run(["eval", "--checkpoint", str(trained_run), "--run-root", str(tmp_path),
                    "--data-dir", str(desk_mnist_dir)])
    assert code == 0
    (out_dir,) = tmp_path.iterdir()
    with open(out_dir / "eval.csv") as fh:
        row = next(csv.DictReader(fh))
    assert row["checkpoints"] == "2" and row["mode"] == "metric" and row["num_images"] == "20"
    assert 0.0 <= float(row["error_rate"]) <= 1.0
    assert "error rate" in capsys.readouterr().out


@pytest.mark.parametrize("kind, filename", [("curve", "curve.csv"), ("coeff", "coeff.csv"),
                                            ("influence", "influence.csv"), ("actmap", "actmap.csv")])
def test_analyze_outputs(kind, filename, trained_run, desk_mnist_dir, tmp_path):
    ckpt = trained_run / "ckpt-0000003.bin"
    code = cli.run(["analyze", kind, "--checkpoint", str(ckpt), "--run-root", str(tmp_path),
                    "--data-dir", str(desk_mnist_dir), "--top", "5"])
    assert code == 0
    (out_dir,) = tmp_path.iterdir()
    with open(out_dir / filename) as fh:
        rows = list(csv.reader(fh))
    if kind == "actmap":
        assert len(rows) == 6 and len(rows[0]) == 6
    elif kind == "curve":
        assert rows[0] == ["position", "squash"] and len(rows) == 6


def test_analyze_with_activation_override(trained_run, desk_mnist_dir, tmp_path):
    code = cli.run(["analyze", "curve", "--checkpoint", str(trained_run / "ckpt-0000003.bin"),
                    "--activation", "pa", "--run-root", str(tmp_path), "--data-dir", str(desk_mnist_dir)])
    assert code == 0
    (out_dir,) = tmp_path.iterdir()
    assert (out_dir / "curve.csv").read_text().startswith("position,pa")


def test_actmap_index_out_of_range(trained_run, desk_mnist_dir, tmp_path, capsys):
    code = cli.run(["analyze", "actmap", "--checkpoint", str(trained_run / "ckpt-0000003.bin"),
                    "--index", "999", "--run-root", str(tmp_path), "--data-dir", str(desk_mnist_dir)])
    assert code == 1
    assert "out of range" in capsys.readouterr().err


def test_missing_data_exit_code(tmp_path, capsys):
    code = cli.run(["train", *quick_flags(tmp_path / "nothing", tmp_path / "runs")])
    assert code == 3
    assert "capsroute: error: data not found" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["train", "--no-such-flag"],
    ["train", "--activation", "relu"],
    ["train", "--prim-channels", "16"],
    ["analyze", "bogus", "--checkpoint", "x"],
    [],
])
def test_usage_errors(argv):
    assert cli.run(argv) == 2


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("batch_size = 0\n")
    assert cli.run(["train", "--config", str(cfg), "--run-root", str(tmp_path)]) == 2
    assert "config" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path, desk_mnist_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("preset = desk_mnist\nmax_steps = 2\nseed = 7\n")
    root = tmp_path / "runs"
    code = cli.run(["train", "--config", str(cfg), "--max-steps", "1", "--run-root", str(root),
                    "--data-dir", str(desk_mnist_dir), "--train-subset", "20", "--batch-size", "4"])
    assert code == 0
    (run_dir,) = root.iterdir()
    text = (run_dir / "config.txt").read_text()
    assert "max_steps = 1" in text and "seed = 7" in text


def test_bad_checkpoint_exit_code(tmp_path, capsys):
    bad = tmp_path / "ckpt-0000001.bin"
    bad.write_bytes(b"garbage")
    assert cli.run(["eval", "--checkpoint", str(bad), "--run-root", str(tmp_path)]) == 1
    assert cli.run(["eval", "--checkpoint", str(tmp_path / "missing.bin")]) == 1
    assert "capsroute: error" in capsys.readouterr().err


def test_divergence_exit_code(desk_mnist_dir, tmp_path, monkeypatch, capsys):
    real = training.margin_loss
    monkeypatch.setattr(training, "margin_loss", lambda *a: real(*a) * float("nan"))
    assert cli.run(["train", *quick_flags(desk_mnist_dir, tmp_path)]) == 4
    assert "diverged" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert cli.run(["gradcheck", "--cases", "3", "--only", "relu", "squash"]) == 0
    out = capsys.readouterr().out
    assert "relu" in out and "squash" in out and "PASS" in out
    assert cli.run(["gradcheck", "--only"]) == 2


def test_synth_multimnist(desk_mnist_dir, tmp_path):
    out = tmp_path / "mm"
    code = cli.run(["synth-multimnist", "--data-dir", str(desk_mnist_dir), "--per-image", "2",
                    "--output", str(out), "--chunk", "300"])
    assert code == 0
    from capsroute.data import load_multimnist
    data = load_multimnist(out, "test")
    assert data.images.shape == (2000, 1, 36, 36)
    assert (data.labels[:, 0] != data.labels[:, 1]).all()


def test_shipped_configs_parse():
    from pathlib import Path

    from capsroute.config import load_config
    root = Path(__file__).resolve().parents[1] / "configs"
    desk = load_config(root / "desk_mnist.cfg", activation="pa", pa_n=6)
    assert desk.activation == "pa" and desk.train_subset == 1000
    cifar = load_config(root / "cifar10.cfg")
    assert cifar.model_input_size == 24 and cifar.prim_channels == 64


def test_curve_with_dataset_suffix(trained_run, desk_mnist_dir, tmp_path):
    code = cli.run(["analyze", "curve", "--checkpoint", str(trained_run / "ckpt-0000003.bin"),
                    "--dataset", "mnist-test", "--top", "1000", "--run-root", str(tmp_path),
                    "--data-dir", str(desk_mnist_dir)])
    assert code == 0
    (out_dir,) = tmp_path.iterdir()
    rows = (out_dir / "curve.csv").read_text().splitlines()
    assert len(rows) == 1 + 72
