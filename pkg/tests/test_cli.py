"""CLI contracts: subcommands, exit codes, config precedence, determinism."""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from idcae.cli import main, parse_config_file
from idcae.scoring import ScoreTable


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_data")
    code = run_cli(
        "synth", "--out", out, "--n-ids", 2, "--clips-per-id", 6,
        "--anomaly-fraction", 0.34, "--seed", 13, "--duration", 1.5,
    )
    assert code == 0
    return out


TRAIN_ARGS = ["--epochs", 3, "--frames-per-spec", 30, "--batch-size", 64, "--mels", 16, "--seed", 4]


@pytest.fixture(scope="module")
def cli_model(cli_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_model") / "model.idcae"
    code = run_cli("train", "--manifest", cli_data / "manifest.tsv", "--out", out, *TRAIN_ARGS)
    assert code == 0
    return out


def test_synth_counts_and_split_rules(cli_data):
    from idcae import parse_manifest

    man = parse_manifest(cli_data / "manifest.tsv")
    train_entries = man.entries_for("synth", split="train")
    test_entries = man.entries_for("synth", split="test")
    assert len(train_entries) == 12 and len(test_entries) == 12
    assert all(e.label == "normal" for e in train_entries)
    n_anom = sum(e.label == "anomaly" for e in test_entries)
    assert n_anom == 2 * round(0.34 * 6)  # test split only
    assert (cli_data / "run_config.txt").exists()


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("synth", "--out", out, "--n-ids", 1, "--clips-per-id", 2,
                       "--seed", 5, "--duration", 1.0) == 0
    for wav in sorted(p.name for p in a.glob("*.wav")):
        assert (a / wav).read_bytes() == (b / wav).read_bytes()


def test_train_writes_model_log_figure_config(cli_model):
    assert cli_model.exists()
    assert cli_model.with_suffix(".train_log.tsv").exists()
    assert cli_model.with_suffix(".loss.png").exists()
    run_config = parse_config_file(cli_model.parent / "run_config.txt")
    assert run_config["train.epochs"] == 3
    assert run_config["mel.n_mels"] == 16


def test_preset_equals_explicit_flags(cli_data, tmp_path):
    base = ["--manifest", cli_data / "manifest.tsv", *TRAIN_ARGS]
    a = tmp_path / "preset.idcae"
    b = tmp_path / "flags.idcae"
    assert run_cli("train", *base, "--out", a, "--preset", "condition") == 0
    assert run_cli("train", *base, "--out", b, "--alpha", 0.75, "--c-value", 5.0) == 0
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_set_precedence(cli_data, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("train.alpha = 0.9\ntrain.epochs = 2\n", encoding="utf-8")
    out = tmp_path / "m.idcae"
    code = run_cli(
        "train", "--manifest", cli_data / "manifest.tsv", "--out", out,
        "--config", cfg, "--set", "train.alpha=0.8", "--mels", 16,
        "--frames-per-spec", 20, "--batch-size", 64,
    )
    assert code == 0
    run_config = parse_config_file(out.parent / "run_config.txt")
    assert run_config["train.alpha"] == 0.8  # --set beats the file
    assert run_config["train.epochs"] == 2  # file beats the preset default
    from idcae import load_model

    assert load_model(out).train_meta["alpha"] == 0.8


def test_score_contracts(cli_model, cli_data, tmp_path):
    scores = tmp_path / "scores.tsv"
    assert run_cli("score", "--model", cli_model, "--manifest", cli_data / "manifest.tsv",
                   "--out", scores) == 0
    table = ScoreTable.read(scores)
    assert len(table) == 12  # every test clip scored
    ids = [r.clip_id for r in table.rows]
    assert ids == sorted(ids)


def test_score_unknown_id_sidecar(cli_model, cli_data, tmp_path):
    # rebuild the manifest with absolute paths plus one clip of an unknown ID
    extended = tmp_path / "manifest.tsv"
    lines = []
    for raw in (cli_data / "manifest.tsv").read_text(encoding="utf-8").splitlines():
        if raw.startswith("#"):
            continue
        fields = raw.split("\t")
        fields[0] = str(cli_data / fields[0])
        lines.append("\t".join(fields))
    stray = tmp_path / "stray.wav"
    stray.write_bytes(next(cli_data.glob("*test*.wav")).read_bytes())
    lines.append(f"{stray}\tsynth\tid_99\tnormal\ttest")
    extended.write_text("\n".join(lines) + "\n", encoding="utf-8")
    out = tmp_path / "scores.tsv"
    assert run_cli("score", "--model", cli_model, "--manifest", extended, "--out", out) == 0
    sidecar = Path(str(out) + ".errors")
    assert sidecar.exists() and "id_99" in sidecar.read_text(encoding="utf-8")
    assert len(ScoreTable.read(out)) == 12


def test_eval_report_and_exports(cli_model, cli_data, tmp_path, capsys):
    scores = tmp_path / "scores.tsv"
    run_cli("score", "--model", cli_model, "--manifest", cli_data / "manifest.tsv", "--out", scores)
    out_dir = tmp_path / "eval"
    code = run_cli("eval", "--scores", scores, "--out-dir", out_dir,
                   "--export-roc", "--export-hist")
    assert code == 0
    metrics = (out_dir / "metrics.tsv").read_text(encoding="utf-8")
    lines = [l for l in metrics.splitlines() if not l.startswith("#")]
    assert any("\tALL\t" in l for l in lines)  # pooled row
    assert any("\tid_00\t" in l for l in lines) and any("\tid_01\t" in l for l in lines)
    for name in ("roc_synth.tsv", "roc_synth.png", "hist_synth.tsv", "hist_synth.png"):
        assert (out_dir / name).exists()
    out = capsys.readouterr().out
    assert "AUC" in out and "synth" in out


def test_eval_single_class_exits_2(tmp_path):
    scores = tmp_path / "scores.tsv"
    scores.write_text(
        "a\tsynth\tid_00\tnormal\t0.5\nb\tsynth\tid_00\tnormal\t0.7\n", encoding="utf-8"
    )
    assert run_cli("eval", "--scores", scores, "--out-dir", tmp_path / "e") == 2


def test_usage_errors_exit_1(tmp_path):
    assert run_cli("train", "--manifest", "x.tsv") == 1  # missing --out
    assert run_cli("nonsense") == 1
    assert run_cli("preset", "dump", "turbo") == 1


def test_data_errors_exit_2(tmp_path):
    assert run_cli("score", "--model", tmp_path / "missing.idcae",
                   "--manifest", tmp_path / "nope.tsv", "--out", tmp_path / "s.tsv") == 2
    bad = tmp_path / "bad.tsv"
    bad.write_text("only\tfour\tfields\there\n", encoding="utf-8")
    assert run_cli("train", "--manifest", bad, "--out", tmp_path / "m.idcae") == 2


def test_preset_dump(capsys, tmp_path):
    assert run_cli("preset", "dump", "condition") == 0
    out = capsys.readouterr().out
    assert "train.alpha = 0.75" in out
    assert "arch.conditioning_enabled = true" in out
    target = tmp_path / "p.cfg"
    assert run_cli("preset", "dump", "scaler", "--out", target) == 0
    dumped = parse_config_file(target)
    assert dumped["arch.conditioning_enabled"] is False


def test_grid_and_ensemble_cli(cli_data, tmp_path):
    out_dir = tmp_path / "grid"
    common = [
        "--manifest", cli_data / "manifest.tsv", "--out-dir", out_dir,
        "--alphas", "0.9,0.75", "--c-values", "2.5,5", "--mel-counts", "16",
        "--norms", "l1", "--epochs", 2, "--frames-per-spec", 20,
        "--batch-size", 64, "--seed", 3, "--jobs", 1,
    ]
    assert run_cli("grid", *common) == 0
    ledger = (out_dir / "grid_ledger.tsv").read_text(encoding="utf-8")
    assert sum(1 for l in ledger.splitlines() if not l.startswith("#")) == 4
    assert run_cli("ensemble", *common, "--resolution", 20, "--surface") == 0
    for name in ("ensemble_result.tsv", "ensemble_scores.tsv", "mauc_surface.tsv", "mauc_surface.png"):
        assert (out_dir / name).exists()
    surface = np.loadtxt(out_dir / "mauc_surface.tsv")
    assert surface.shape == (21 * 11, 4)


def test_deterministic_flag_reproduces_bytes(tmp_path):
    data = tmp_path / "data"
    assert run_cli("synth", "--out", data, "--n-ids", 2, "--clips-per-id", 4,
                   "--anomaly-fraction", 0.25, "--seed", 2, "--duration", 1.0) == 0
    outputs = []
    for tag in ("x", "y"):
        model = tmp_path / f"{tag}.idcae"
        scores = tmp_path / f"{tag}_scores.tsv"
        for cmd in (
            ["train", "--deterministic", "--manifest", data / "manifest.tsv", "--out", model,
             "--epochs", 2, "--frames-per-spec", 20, "--batch-size", 32, "--mels", 16, "--seed", 1],
            ["score", "--deterministic", "--model", model,
             "--manifest", data / "manifest.tsv", "--out", scores],
        ):
            proc = subprocess.run(
                [sys.executable, "-m", "idcae.cli", *map(str, cmd)], capture_output=True, text=True
            )
            assert proc.returncode == 0, proc.stderr
        outputs.append((model.read_bytes(), scores.read_bytes()))
    assert outputs[0] == outputs[1]
