import json
import subprocess
import sys

import pytest

from bridgespot.cli import build_parser, config_from_args, main
from bridgespot.harness.config import (ConfigError, ExperimentConfig, dump_config, load_config,
                                       parse_config_text)


def test_defaults_follow_protocol():
    cfg = ExperimentConfig()
    assert (cfg.det_iters, cfg.rec_iters, cfg.bridge_iters) == (5000, 5000, 10000)
    assert cfg.batch_size == 8
    assert (cfg.lambda_det, cfg.lambda_rec) == (1.0, 1.0)
    assert cfg.bridge_init == "zero" and cfg.encoder_depth == 1


@pytest.mark.parametrize("bad", [dict(det_lr=0), dict(batch_size=0), dict(encoder_depth=-1),
                                 dict(bridge_init="xavier"), dict(paradigm="magic"),
                                 dict(test_size=0), dict(weight_decay=-1)])
def test_invalid_fields_rejected_at_construction(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_parse_config_text_types_and_comments():
    values = parse_config_text("# comment\nseed = 3\nbridge-init: gaussian  # inline\n"
                               "det_adapter = off\nbridge_lr 0.002\n")
    assert values == {"seed": 3, "bridge_init": "gaussian", "det_adapter": False,
                      "bridge_lr": 0.002}


@pytest.mark.parametrize("text", ["nonsense = 1", "seed = abc", "det_adapter = maybe", "seed"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_dump_then_load_round_trip(tmp_path):
    cfg = ExperimentConfig(seed=11, encoder_depth=3, rec_adapter=False)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_cli_flags_override_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("seed = 3\nbridge_iters = 50\nencoder_depth = 3\n")
    args = build_parser().parse_args(["compare", "--config", str(path), "--seed", "9",
                                      "--encoder-depth", "0", "--out", str(tmp_path)])
    cfg = config_from_args(args)
    assert (cfg.seed, cfg.bridge_iters, cfg.encoder_depth) == (9, 50, 0)


@pytest.mark.parametrize("cmd", [["train-det", "--out", "x"], ["train-rec", "--out", "x"],
                                 ["compare", "--out", "x"],
                                 ["train-bridge", "--det", "a", "--rec", "b", "--out", "x"]])
def test_seed_is_mandatory_for_training_and_compare(cmd):
    with pytest.raises(SystemExit) as exc:
        main(cmd)
    assert exc.value.code == 2


def test_gen_data_writes_files(tmp_path, capsys):
    assert main(["gen-data", "--count", "3", "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("*.pgm"))) == 3


def test_train_then_eval_via_cli(tmp_path, capsys):
    common = ["--seed", "1", "--log-every", "0", "--test-size", "4"]
    assert main(["train-det", *common, "--det-iters", "2", "--out", str(tmp_path / "d")]) == 0
    assert main(["train-rec", *common, "--rec-iters", "2", "--out", str(tmp_path / "r")]) == 0
    capsys.readouterr()
    assert main(["eval", "--test-size", "4", "--det", str(tmp_path / "d"),
                 "--rec", str(tmp_path / "r")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"det_P", "det_R", "det_F", "e2e_P", "e2e_R", "e2e_F"}


def test_corrupt_checkpoint_reports_error(tmp_path, capsys):
    (tmp_path / "d").write_bytes(b"garbage")
    assert main(["eval", "--det", str(tmp_path / "d"), "--rec", str(tmp_path / "d")]) == 2
    assert "error" in capsys.readouterr().err


def test_console_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "bridgespot.cli", "--help"],
                         capture_output=True, text=True, check=True)
    assert "train-bridge" in out.stdout
