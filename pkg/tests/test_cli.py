import json
import subprocess
import sys

import pytest

from amtl.cli import main
from amtl.evaluation import read_hypotheses

TINY = ["--preset", "tiny", "--num-mels", "40", "--dropout", "0"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out-dir", str(ws / "data"), "--seed", "7", "--run-dir", str(ws / "r_synth")]) == 0
    manifest = ws / "data" / "manifest.jsonl"
    assert main(["tokenizer", "--manifest", str(manifest), "--out", str(ws / "vocab.json"), "--run-dir", str(ws / "r_tok")]) == 0
    return ws, manifest


def train_args(ws, manifest, run_dir, *extra):
    return [
        "train", *TINY, "--manifest", str(manifest), "--vocab", str(ws / "vocab.json"),
        "--max-steps", "4", "--batch-size", "4", "--run-dir", str(run_dir), *extra,
    ]


def test_synth_writes_resolved_config_and_log(workspace):
    ws, manifest = workspace
    resolved = json.loads((ws / "r_synth" / "resolved-config.json").read_text())
    assert resolved["seed"] == 7 and resolved["command"] == "synth"
    assert (ws / "r_synth" / "run.log").exists()
    assert manifest.exists()


def test_train_is_byte_identical_across_runs(workspace):
    ws, manifest = workspace
    for name in ("a", "b"):
        assert main(train_args(ws, manifest, ws / name, "--out", str(ws / name / "final.ckpt"))) == 0
    for f in ("model.ckpt", "final.ckpt", "train_log.jsonl", "run.log", "resolved-config.json"):
        if f == "resolved-config.json":
            a = json.loads((ws / "a" / f).read_text())
            b = json.loads((ws / "b" / f).read_text())
            a["paths"].pop("out"), b["paths"].pop("out")
            assert a == b
        else:
            assert (ws / "a" / f).read_bytes() == (ws / "b" / f).read_bytes(), f


def test_resolved_config_alone_reproduces_run(workspace):
    ws, manifest = workspace
    assert main(train_args(ws, manifest, ws / "orig", "--lambda-acc", "0.2")) == 0
    assert main(["train", "--config", str(ws / "orig" / "resolved-config.json"), "--run-dir", str(ws / "again")]) == 0
    assert (ws / "orig" / "model.ckpt").read_bytes() == (ws / "again" / "model.ckpt").read_bytes()
    assert (ws / "orig" / "train_log.jsonl").read_bytes() == (ws / "again" / "train_log.jsonl").read_bytes()


def test_flags_override_config_file(workspace, tmp_path):
    ws, manifest = workspace
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"weights": {"lambda_acc": 0.3, "lambda_asr": 0.7}, "train": {"batch_size": 2}}))
    args = train_args(ws, manifest, tmp_path / "run", "--config", str(cfg), "--lambda-acc", "0.1", "--lambda-asr", "0.9", "--accent-head", "mid")
    i = args.index("--batch-size")
    del args[i : i + 2]
    assert main(args) == 0
    resolved = json.loads((tmp_path / "run" / "resolved-config.json").read_text())
    assert resolved["weights"]["lambda_acc"] == 0.1 and resolved["weights"]["lambda_asr"] == 0.9
    assert resolved["train"]["batch_size"] == 2
    assert resolved["model"]["accent_head_layer"] == "mid"
    assert resolved["train"]["max_steps"] == 4


def test_seed_environment_fallback(workspace, tmp_path, monkeypatch):
    ws, manifest = workspace
    monkeypatch.setenv("AMTL_SEED", "41")
    assert main(["tokenizer", "--manifest", str(manifest), "--out", str(tmp_path / "v.json"), "--run-dir", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "resolved-config.json").read_text())["seed"] == 41
    assert main(["tokenizer", "--seed", "3", "--manifest", str(manifest), "--out", str(tmp_path / "v.json"), "--run-dir", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "resolved-config.json").read_text())["seed"] == 3
    monkeypatch.setenv("AMTL_SEED", "nope")
    assert main(["tokenizer", "--manifest", str(manifest), "--out", str(tmp_path / "v.json"), "--run-dir", str(tmp_path / "r")]) == 1


def test_accent_head_out_of_range_exits_1(workspace, tmp_path, capsys):
    ws, manifest = workspace
    assert main(train_args(ws, manifest, tmp_path, "--num-layers", "4", "--accent-head", "99")) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ") and "accent_head_layer" in err and len(err.splitlines()) == 1


def test_unknown_config_key_exits_1(workspace, tmp_path, capsys):
    ws, manifest = workspace
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"num_layerz": 3}}))
    assert main(train_args(ws, manifest, tmp_path / "run", "--config", str(cfg))) == 1
    assert "model.num_layerz" in capsys.readouterr().err


def test_missing_required_path_exits_1(tmp_path, capsys):
    assert main(["train", "--run-dir", str(tmp_path)]) == 1
    assert "--manifest" in capsys.readouterr().err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_console_entry_point_exit_codes(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "amtl.cli", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run(
        [sys.executable, "-m", "amtl.cli", "evaluate", "--model", str(tmp_path / "missing.ckpt"), "--manifest", "x",
         "--run-dir", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1 and proc.stderr.startswith("error: ")


def test_evaluate_pseudolabel_and_report(workspace):
    ws, manifest = workspace
    assert main(train_args(ws, manifest, ws / "m", "--out", str(ws / "m.ckpt"))) == 0
    ev = ["evaluate", "--model", str(ws / "m.ckpt"), "--manifest", str(manifest), "--baseline-avg", "14.19"]
    assert main([*ev, "--run-dir", str(ws / "ev1")]) == 0
    assert main([*ev, "--run-dir", str(ws / "ev2")]) == 0
    report = (ws / "ev1" / "report.tsv").read_text()
    assert report == (ws / "ev2" / "report.tsv").read_text()
    header, row = (line.split("\t") for line in report.splitlines()[:2])
    assert header == ["model", "accent_0", "accent_1", "avg", "w_all", "w_top", "w_bot", "delta_pct"]
    avg = float(row[3])
    assert float(row[-1]) == pytest.approx((avg - 14.19) / 14.19 * 100, abs=0.01)
    assert len(read_hypotheses(ws / "ev1" / "hyps.jsonl")) == 8
    out = ws / "pseudo" / "manifest.jsonl"
    assert main(["pseudolabel", "--model", str(ws / "m.ckpt"), "--manifest", str(manifest), "--out", str(out), "--run-dir", str(ws / "pl")]) == 0
    assert out.exists()
    assert main(["report", "--hyps", f"m={ws / 'ev1' / 'hyps.jsonl'}", "--format", "markdown", "--run-dir", str(ws / "rep")]) == 0
    assert (ws / "rep" / "report.md").read_text().startswith("|")


def test_pretrain_then_init(workspace):
    ws, manifest = workspace
    args = ["pretrain", *TINY, "--manifest", str(manifest), "--out", str(ws / "pre.ckpt"), "--steps", "3", "--run-dir", str(ws / "pre")]
    assert main(args) == 0
    assert (ws / "pre" / "pretrain_log.jsonl").read_text().count("\n") == 3
    assert main(train_args(ws, manifest, ws / "ft", "--init", str(ws / "pre.ckpt"))) == 0
    assert "initialized trunk" in (ws / "ft" / "run.log").read_text()
