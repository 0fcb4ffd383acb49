import json
import os

import numpy as np
import pytest

from bdil.cli import UsageError, main, parse_config


SMOKE = ["--n_per_class", "20", "--iters", "30", "--batch_size", "8",
         "--n_matched", "2", "--mc_l", "2", "--mc_m", "2",
         "--val_every", "10", "--stem_widths", "8", "--z_dim", "4",
         "--lambda_psi", "1", "--kl_scale", "0.001", "--lr", "0.003"]


@pytest.fixture()
def data_dir(tmp_path):
    out = tmp_path / "data"
    rc = main(["gen-data", "--out", str(out), "--n_per_class", "20"])
    assert rc == 0
    return out


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    assert "unknown command" in capsys.readouterr().err


def test_gen_data_writes_seven_domains_and_manifest(data_dir):
    csvs = sorted(p.name for p in data_dir.glob("domain_*.csv"))
    assert len(csvs) == 7
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["source_angles"] == [15, 30, 45, 60, 75]
    assert manifest["target_angles"] == [0, 90]
    assert manifest["seed"] == 0
    assert (data_dir / "config.resolved").exists()


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--out", str(a), "--n_per_class", "10"]) == 0
    assert main(["gen-data", "--out", str(b), "--n_per_class", "10"]) == 0
    for p in sorted(a.glob("*.csv")):
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_train_missing_data_dir_exits_two(tmp_path, capsys):
    rc = main(["train", "--data", str(tmp_path / "nope"), "--out",
               str(tmp_path / "run")])
    assert rc == 2
    assert "nope" in capsys.readouterr().err


def test_train_eval_round_trip(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    rc = main(["train", "--data", str(data_dir), "--out", str(run)] + SMOKE)
    assert rc == 0
    assert (run / "best.ckpt").exists()
    assert (run / "metrics.jsonl").exists()
    summary = json.loads((run / "summary.json").read_text())
    assert 0.0 <= summary["best_val_accuracy"] <= 1.0
    capsys.readouterr()

    rc = main(["eval", "--checkpoint", str(run / "best.ckpt"),
               "--input", str(data_dir / "domain_0.csv")] + SMOKE)
    assert rc == 0
    metrics = json.loads(capsys.readouterr().out)
    assert set(metrics) == {"accuracy", "nll", "ece"}


def test_eval_map_flag(data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out", str(run)] + SMOKE) == 0
    capsys.readouterr()
    rc = main(["eval", "--checkpoint", str(run / "best.ckpt"),
               "--input", str(data_dir / "domain_90.csv"), "--map", "true"] + SMOKE)
    assert rc == 0
    json.loads(capsys.readouterr().out)


def test_train_determinism_byte_identical(data_dir, tmp_path):
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["train", "--data", str(data_dir), "--out", str(r1)] + SMOKE) == 0
    assert main(["train", "--data", str(data_dir), "--out", str(r2)] + SMOKE) == 0
    assert (r1 / "metrics.jsonl").read_bytes() == (r2 / "metrics.jsonl").read_bytes()
    assert (r1 / "best.ckpt").read_bytes() == (r2 / "best.ckpt").read_bytes()


def test_ablate_writes_table(data_dir, tmp_path):
    out = tmp_path / "abl"
    rc = main(["ablate", "--data", str(data_dir), "--out", str(out),
               "--variants", "a,j", "--iters", "5"] + SMOKE[:-2])
    assert rc == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "variant,in_mean,in_std,ood_mean,ood_std,n_seeds"
    assert len(lines) == 3


def test_sweep_writes_table(data_dir, tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--data", str(data_dir), "--out", str(out),
               "--sweep_param", "lambda_phi", "--sweep_values", "0.1,1",
               "--iters", "5"] + SMOKE[:-2])
    assert rc == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "value,val_acc,ood_acc"
    assert len(lines) == 3


def test_config_file_and_override_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("iters=7\nlr=0.01\n# comment\n\n")
    cfg = parse_config(str(cfg_file), overrides=[("iters", "9")])
    assert cfg["iters"] == 9
    assert cfg["lr"] == 0.01


def test_config_rejects_unknown_key(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("not_a_key=1\n")
    with pytest.raises(UsageError, match="unknown key"):
        parse_config(str(cfg_file))


def test_config_rejects_malformed_line(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("just some words\n")
    with pytest.raises(UsageError, match="line 1"):
        parse_config(str(cfg_file))


def test_unknown_cli_option_exits_two(capsys):
    assert main(["gen-data", "--bogus", "1"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_seed_precedence_env_and_flag(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("seed=3\n")
    monkeypatch.setenv("BDIL_SEED", "5")
    cfg = parse_config(str(cfg_file))
    assert cfg["seed"] == 5
    cfg = parse_config(str(cfg_file), overrides=[("seed", "7")])
    assert cfg["seed"] == 7
    monkeypatch.delenv("BDIL_SEED")
    assert parse_config(str(cfg_file))["seed"] == 3


def test_resolved_config_reproduces_run(data_dir, tmp_path):
    # the echoed config holds every key needed to rerun identically
    r1 = tmp_path / "r1"
    assert main(["train", "--data", str(data_dir), "--out", str(r1)] + SMOKE) == 0
    resolved = tmp_path / "resolved.cfg"
    lines = [ln for ln in (r1 / "config.resolved").read_text().splitlines()
             if not ln.startswith(("map=", "seeds=", "variants=", "sweep_"))]
    resolved.write_text("\n".join(lines) + "\n")
    r2 = tmp_path / "r2"
    assert main(["train", "--config", str(resolved),
                 "--data", str(data_dir), "--out", str(r2)]) == 0
    assert (r1 / "metrics.jsonl").read_bytes() == (r2 / "metrics.jsonl").read_bytes()


def test_verify_command_exits_zero(capsys):
    rc = main(["verify"])
    out = capsys.readouterr().out
    assert rc == 0
    lines = [ln for ln in out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(lines) >= 4
    assert all(ln.startswith("PASS") for ln in lines)
