import json
import subprocess
import sys

import numpy as np
import pytest

from gfnet.cli import main
from gfnet.persist import load_checkpoint


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def toy_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "toy.gfck"
    assert main(["train", "--preset", "toy", "--epochs", "12", "--out", str(path)]) == 0
    return path


def test_verify_subprocess():
    proc = subprocess.run([sys.executable, "-m", "gfnet", "verify"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    suites = [ln.split()[0] for ln in proc.stdout.splitlines() if " ok " in ln]
    assert suites == ["fourier", "gfilter", "nn", "model", "train", "bench", "persist"]


def test_flops_ti(capsys):
    code, out, _ = run(capsys, "flops", "--preset", "ti")
    assert code == 0
    line = next(ln for ln in out.splitlines() if ln.startswith("params"))
    n = int(line.split()[1])
    assert abs(n - 7e6) < 0.7e6
    assert "Table-1-convention" in out


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "flops")[0] == 2
    assert run(capsys, "eval", "--ckpt", "x", "--resolution", "twelve")[0] == 2
    code, _, err = run(capsys, "train", "--out", "x.gfck", "--data", "imagenet:size=32")
    assert code == 2 and "synth" in err


def test_runtime_error_names_stage(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--ckpt", str(tmp_path / "missing.gfck"))
    assert code == 1 and "load failed" in err
    bad = tmp_path / "bad.gfck"
    bad.write_bytes(b"GFCK\x01\x00")
    code, _, err = run(capsys, "export-filters", "--ckpt", str(bad), "--out", str(tmp_path / "f.json"))
    assert code == 1 and "export failed" in err and "offset" in err
    code, _, err = run(capsys, "flops", "--preset", "zz")
    assert code == 1 and "config failed" in err


def test_train_writes_checkpoint_with_meta(toy_ckpt):
    ck = load_checkpoint(toy_ckpt)
    assert ck.config.name == "gfnet-toy"
    assert ck.meta["data"]["num_train"] == 512 and ck.meta["train"]["epochs"] == 12
    assert ck.meta["final"]["train_acc"] >= 0.95


def test_eval_native_and_transferred(capsys, toy_ckpt):
    code, out, _ = run(capsys, "eval", "--ckpt", str(toy_ckpt))
    assert code == 0 and "tokens 8x8" in out
    code, out, _ = run(capsys, "eval", "--ckpt", str(toy_ckpt), "--resolution", "12x12")
    assert code == 0 and "tokens 12x12" in out
    assert float(out.split()[1]) > 0.6


def test_export_filters(capsys, toy_ckpt, tmp_path):
    out = tmp_path / "filters.json"
    code, _, _ = run(capsys, "export-filters", "--ckpt", str(toy_ckpt), "--out", str(out), "--bands", "6")
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["blocks"]) == 2 and doc["num_bands"] == 6


def test_seed_env_overrides_flag(capsys, tmp_path, monkeypatch):
    data = "synth:train=32,test=16"
    monkeypatch.setenv("GFNET_SEED", "5")
    assert main(["train", "--epochs", "1", "--seed", "1", "--data", data, "--out", str(tmp_path / "a.gfck")]) == 0
    monkeypatch.delenv("GFNET_SEED")
    assert main(["train", "--epochs", "1", "--seed", "5", "--data", data, "--out", str(tmp_path / "b.gfck")]) == 0
    a, b = load_checkpoint(tmp_path / "a.gfck"), load_checkpoint(tmp_path / "b.gfck")
    assert a.meta["train"]["seed"] == 5
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_bench_writes_csv(capsys, tmp_path):
    out = tmp_path / "bench.csv"
    code, stdout, _ = run(capsys, "bench", "--mixers", "global_filter,depthwise_conv(3)",
                          "--tokens", "16,64,256", "--dim", "8", "--reps", "5", "--out", str(out))
    assert code == 0
    assert len(out.read_text().splitlines()) == 7
    assert "exponent" in stdout
