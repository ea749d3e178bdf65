import json
import subprocess
import sys

import numpy as np
import pytest

from sgsm.cli import main
from sgsm.tensorio import read_tensor, write_tensor

CONFIG = {
    "schema": 1,
    "methods": ["Dft", "Dwt", "Raw", "Hht", "Periodogram"],
    "input_length": 64,
    "code_length": 16,
    "seed": 0,
    "compressor": {"epochs": 2, "learning_rate": 1e-3, "batch_size": 32},
    "mixer": {"epochs": 2, "learning_rate": 1e-3, "batch_size": 32},
    "classifier": {"epochs": 20},
}


def _write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**CONFIG, **overrides}))
    return str(path)


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _write_config(tmp)
    steps = [
        ["synth", "--config", cfg, "--classes", "3", "--per-class", "8", "--unlabeled", "60"],
        ["transform", "--config", cfg],
        ["train-compressors", "--config", cfg],
        ["train-mixer", "--config", cfg],
        ["embed", "--config", cfg, "--mask", "TTFFT"],
        ["select", "--config", cfg],
    ]
    codes = [main(step) for step in steps]
    return tmp, cfg, codes


def test_all_steps_succeed(workflow):
    assert workflow[2] == [0] * 6


def test_artifacts(workflow):
    tmp = workflow[0]
    assert read_tensor(tmp / "data" / "unlabeled.sgtf").shape == (60, 64)
    assert read_tensor(tmp / "data" / "labels.sgtf").dtype == np.int64
    assert read_tensor(tmp / "data" / "transformed_Hht.sgtf").shape == (60, 96)
    assert read_tensor(tmp / "checkpoints" / "codes.sgtf").shape == (60, 80)
    for name in ("Dft", "Dwt", "Raw", "Hht", "Periodogram"):
        assert (tmp / "checkpoints" / f"compressor_{name}.sgtf").exists()
    assert (tmp / "checkpoints" / "instance.json").exists()
    emb = read_tensor(tmp / "outputs" / "embeddings_TTFFT.sgtf")
    assert emb.shape == (24, 80)
    side = json.loads((tmp / "outputs" / "embeddings_TTFFT.sgtf.json").read_text())
    assert side["mask"] == "TTFFT"
    doc = json.loads((tmp / "outputs" / "report.json").read_text())
    assert len(doc["masks"]) == 31


def test_report_command(workflow, capsys):
    tmp, cfg, _ = workflow
    assert main(["report", "--config", cfg, "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out == json.loads((tmp / "outputs" / "report.json").read_text())
    assert main(["report", "--input", str(tmp / "outputs" / "report.json")]) == 0
    assert "best=" in capsys.readouterr().out


def test_select_mask_subset(workflow, tmp_path):
    _, cfg, _ = workflow
    out = tmp_path / "sub"
    assert main(["select", "--config", cfg, "--mask", "TTTTT", "--mask", "FFFTF",
                 "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert [m["mask"] for m in doc["masks"]] == ["TTTTT", "FFFTF"]


def test_select_repeatable(workflow, tmp_path):
    _, cfg, _ = workflow
    for name in ("a", "b"):
        assert main(["select", "--config", cfg, "--mask", "TFTFT", "--mask", "FTFTF",
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_config_errors_exit_2(tmp_path):
    assert main(["synth"]) == 2  # --config missing
    assert main(["synth", "--config", str(tmp_path / "none.json")]) == 2
    bad = _write_config(tmp_path, code_length=40)
    assert main(["synth", "--config", bad]) == 2
    cfg = _write_config(tmp_path)
    assert main(["embed", "--config", cfg, "--mask", "FFFFF"]) == 2
    assert main(["embed", "--config", cfg, "--mask", "TT"]) == 2
    assert main(["select", "--config", cfg, "--mask", "TTXTT"]) == 2
    assert main(["select", "--config", cfg, "--classifier", "forest"]) == 2


def test_data_errors_exit_3(tmp_path):
    cfg = _write_config(tmp_path)
    assert main(["transform", "--config", cfg]) == 3  # no dataset yet
    assert main(["embed", "--config", cfg, "--mask", "TTTTT"]) == 3  # no checkpoints
    assert main(["report", "--input", str(tmp_path / "missing.json")]) == 3
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "unlabeled.sgtf").write_bytes(b"garbage")
    assert main(["transform", "--config", cfg]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_4(tmp_path):
    cfg = _write_config(tmp_path, methods=["Raw"],
                        compressor={"epochs": 3, "learning_rate": 1e30, "batch_size": 8})
    x = np.random.default_rng(0).standard_normal((16, 64)) * 1e3
    (tmp_path / "data").mkdir()
    write_tensor(tmp_path / "data" / "transformed_Raw.sgtf", x)
    assert main(["train-compressors", "--config", cfg]) == 4


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sgsm", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("synth", "transform", "train-compressors", "train-mixer", "embed", "select", "report"):
        assert cmd in out.stdout
