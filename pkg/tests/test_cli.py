import csv
import shutil
import subprocess
import sys

import numpy as np
import pytest

from cellseg import config
from cellseg.checkpoint import read_checkpoint
from cellseg.cli import COMMAND_KEYS, build_parser, main
from cellseg.model import UNetConfig, build_unet

FAST = ["--height", "32", "--depth", "1", "--base-filters", "4", "--in-channels", "1"]


@pytest.fixture
def data(tmp_path):
    root = tmp_path / "data"
    assert main(["synth", "--out", str(root), "-n", "4", "--height", "32", "--width", "32", "--seed", "1"]) == 0
    return root


def train_args(root, out, *extra):
    return ["train", "--images", str(root / "images"), "--masks", str(root / "masks"),
            "--out-dir", str(out), "--epochs", "2", *FAST, *extra]


def test_synth_train_eval_predict(tmp_path, data, capsys):
    run = tmp_path / "run"
    assert main(train_args(data, run)) == 0
    assert {"model.ckpt", "train.log", "history.csv", "config.txt"} <= {p.name for p in run.iterdir()}
    assert len((run / "train.log").read_text().splitlines()) == 2
    capsys.readouterr()
    csv_path = tmp_path / "m.csv"
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--images", str(data / "images"),
                 "--masks", str(data / "masks"), "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert "precision" in out and "miou" in out
    rows = list(csv.DictReader(csv_path.open()))
    assert rows[0]["dataset"] and int(rows[0]["n_images"]) == 4
    pred = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(run / "model.ckpt"), "--images", str(data / "images"),
                 "--masks", str(data / "masks"), "--out-dir", str(pred), "--figure", str(tmp_path / "f.png")]) == 0
    assert len(list(pred.glob("*.png"))) == 4
    assert (tmp_path / "f.png").exists()


def test_eval_prints_csv_without_file(tmp_path, data, capsys):
    main(train_args(data, tmp_path / "run"))
    capsys.readouterr()
    main(["eval", "--checkpoint", str(tmp_path / "run" / "model.ckpt"), "--images", str(data / "images"),
          "--masks", str(data / "masks")])
    assert "dataset,seed,precision,recall,f1,auroc,miou,threshold,n_images" in capsys.readouterr().out


def test_repeat_runs_are_identical(tmp_path, data):
    for name in ("a", "b"):
        assert main(train_args(data, tmp_path / name, "--seed", "1")) == 0
        main(["eval", "--checkpoint", str(tmp_path / name / "model.ckpt"), "--images", str(data / "images"),
              "--masks", str(data / "masks"), "--csv", str(tmp_path / f"{name}.csv")])
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_zero_epochs_writes_initial_weights(tmp_path, data):
    assert main(train_args(data, tmp_path / "run", "--epochs", "0", "--seed", "3")) == 0
    model, _ = read_checkpoint(tmp_path / "run" / "model.ckpt")
    init = build_unet(UNetConfig(in_channels=1, depth=1, base_filters=4, seed=3))
    for k in init.params:
        np.testing.assert_array_equal(model.params[k], init.params[k])
    assert (tmp_path / "run" / "history.csv").read_text().strip() == "epoch,mean_loss,seconds"


def test_mismatched_checkpoint_is_rejected(tmp_path, data, capsys):
    main(train_args(data, tmp_path / "run"))
    code = main(["eval", "--checkpoint", str(tmp_path / "run" / "model.ckpt"), "--images", str(data / "images"),
                 "--masks", str(data / "masks"), "--in-channels", "3"])
    assert code != 0
    err = capsys.readouterr().err
    assert "in_channels" in err and len(err.strip().splitlines()) == 1


def test_exit_codes(tmp_path, data, capsys):
    assert main(["train", "--images", str(data / "images")]) == 1  # missing --masks
    with pytest.raises(SystemExit) as info:
        main(["train", "--bogus"])
    assert info.value.code == 1
    bad = tmp_path / "empty"
    (bad / "images").mkdir(parents=True)
    (bad / "masks").mkdir()
    shutil.copy(data / "images" / "synth_0000.png", bad / "images")
    code = main(train_args(bad, tmp_path / "r"))
    err = capsys.readouterr().err
    assert code == 2 and "synth_0000" in err
    (tmp_path / "junk.ckpt").write_bytes(b"nope")
    assert main(["eval", "--checkpoint", str(tmp_path / "junk.ckpt"), "--images", str(data / "images"),
                 "--masks", str(data / "masks")]) == 2
    assert main(["synth", "--out", str(data), "-n", "1"]) == 2  # exists, no --force
    assert main(["synth", "--out", str(data), "-n", "1", "--height", "8", "--width", "8",
                 "--radius-max", "5"]) == 1


def test_config_file_and_flag_precedence(tmp_path, data):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny run\nimages = data/images\nmasks = data/masks\nepochs = 1\n"
                   "height = 32\ndepth = 1\nbase-filters = 4\nin_channels = 1\nseed = 5\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "run"), "--seed", "6"]) == 0
    model, _ = read_checkpoint(tmp_path / "run" / "model.ckpt")
    assert model.config.seed == 6 and model.config.depth == 1
    assert "epochs = 1" in (tmp_path / "run" / "config.txt").read_text()


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochz = 3\n")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "unknown key 'epochz'" in capsys.readouterr().err


def test_run_dir_env(tmp_path, data, monkeypatch):
    monkeypatch.setenv(config.RUN_DIR_ENV, str(tmp_path / "runs"))
    assert main(["train", "--images", str(data / "images"), "--masks", str(data / "masks"),
                 "--epochs", "0", *FAST]) == 0
    made = list((tmp_path / "runs").iterdir())
    assert len(made) == 1 and made[0].name.startswith("train-")


def test_help_lists_flags_with_defaults():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    text = " ".join(sub["train"].format_help().split())
    for snippet in ("--height HEIGHT resize target height in pixels (default: 256)",
                    "(default: 16)", "--batch-size BATCH_SIZE mini-batch size (default: 2)",
                    "--epochs EPOCHS training epochs (default: 100)",
                    "--learning-rate LEARNING_RATE Adam learning rate (default: 0.0001)",
                    "--base-filters BASE_FILTERS", "(default: 64)"):
        assert snippet in text


def test_every_flag_has_config_equivalent():
    parser = build_parser()
    for command, sub in parser._subparsers._group_actions[0].choices.items():
        for action in sub._actions:
            if action.dest in ("help", "verbose", "config_file"):
                continue
            assert action.dest in config.OPTIONS, (command, action.dest)
            assert action.dest in COMMAND_KEYS[command]


def test_bench_command(tmp_path, data, capsys):
    spec = tmp_path / "bench.cfg"
    spec.write_text(f"data = {data}\nseeds = 1,2\nepochs = 1\nheight = 32\ndepth = 1\nbase_filters = 4\n"
                    "in_channels = 1\n")
    assert main(["bench", "--spec", str(spec), "--out-dir", str(tmp_path / "b")]) == 0
    assert "2 runs" in capsys.readouterr().out
    assert (tmp_path / "b" / "aggregate.csv").exists() and (tmp_path / "b" / "spec.txt").exists()


def test_console_script_runs():
    exe = shutil.which("cellseg")
    cmd = [exe] if exe else [sys.executable, "-m", "cellseg.cli"]
    done = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert done.returncode == 0
    assert all(c in done.stdout for c in ("synth", "train", "eval", "predict", "bench"))
