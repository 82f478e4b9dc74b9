import json

import pytest

from glocalk.cli import main

from conftest import TINY


def tiny_flags(triplet_dir):
    return ["--dataset", "triplets", "--data-path", str(triplet_dir), "--h", str(TINY["hidden"]),
            "--num-hidden", "1", "--d", "2", "--maxiter-p", "2", "--maxiter-f", "2",
            "--pretrain-epochs", "2", "--finetune-epochs", "1", "--seed-list", "0"]


def test_train_and_evaluate(triplet_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *tiny_flags(triplet_dir), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "mean rmse" in printed
    saved = json.loads((out / "report.jsonl").read_text().splitlines()[0])["rmse"]
    assert main(["evaluate", *tiny_flags(triplet_dir),
                 "--checkpoint", str(out / "finetune_seed0.ckpt")]) == 0
    assert f"rmse {saved:.4f}" in capsys.readouterr().out


def test_config_file_with_override(triplet_dir, tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("agg = avg\nconv_layers = 2\n")
    out = tmp_path / "run"
    assert main(["train", *tiny_flags(triplet_dir), "--config", str(cfg), "--conv-layers", "1",
                 "--out", str(out)]) == 0
    conf = json.loads((out / "config.json").read_text())["config"]
    assert conf["agg_mode"] == "elementwise_avg" and conf["conv_layers"] == 1


def test_sweeps(triplet_dir, tmp_path, capsys):
    flags = tiny_flags(triplet_dir)
    assert main(["sweep-epochs", *flags, "--epochs", "0,2", "--out", str(tmp_path / "e")]) == 0
    assert main(["sweep-ratio", *flags, "--ratios", "0.5,1.0"]) == 0
    assert main(["sweep-kernel", *flags, "--sizes", "3,5", "--layers", "1"]) == 0
    text = capsys.readouterr().out
    assert "pretrain_epochs=2" in text and "train_ratio=0.50" in text and "t=5" in text
    assert (tmp_path / "e" / "summary.csv").exists()


def test_gradcheck(capsys):
    assert main(["gradcheck", "--draws", "2"]) == 0
    assert "gradcheck PASS" in capsys.readouterr().out


def test_stats(triplet_dir, capsys):
    assert main(["stats", "--dataset", "triplets", "--data-path", str(triplet_dir)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["ratings"] > 130


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["stats", "--dataset", "ml100k", "--data-path", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["train", "--dataset", "ml100k", "--data-path", str(tmp_path), "--t", "4"]) == 2
    with pytest.raises(SystemExit):
        main(["train", "--agg", "max"])
