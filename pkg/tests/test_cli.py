import csv

import numpy as np
import pytest
import torch
from PIL import Image

from hyperdec.cli import run_command
from hyperdec.config import validate_config
from hyperdec.data import Sample, write_dataset
from hyperdec.model import build_model
from hyperdec.training import TrainState, save_checkpoint


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert run_command(["synth", "--out", str(root), "--seed", "3", "--n-train", "6", "--n-test", "6",
                        "--size", "16", "--targets", "1"]) == 0
    return root


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_synth_layout(tiny_data):
    assert len(list((tiny_data / "images").glob("*.png"))) == 12
    assert len(list((tiny_data / "masks").glob("*.png"))) == 12
    assert len((tiny_data / "splits" / "train.txt").read_text().split()) == 6
    labels = {r["id"]: r["label"] for r in _read_csv(tiny_data / "scenarios.csv")}
    assert set(labels.values()) == {"sky", "maritime", "ground"}


def test_inspect_layout_basic_total(capsys):
    assert run_command(["inspect-layout", "--profile", "desk", "--variant", "basic"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header = lines.index("unit,kind,rows,used_width,slack,bn_params")
    assert lines[-1].split(",")[:4] == ["TOTAL", "basic", "128", "288"]
    assert len(lines) - header - 2 == 4


def test_missing_config_file(capsys):
    code = run_command(["train", "--config", "missing.cfg", "--data", "x", "--out", "y", "--seed", "0"])
    assert code != 0
    assert "missing.cfg" in capsys.readouterr().err


def test_unknown_verb():
    assert run_command(["frobnicate"]) == 2


def test_invalid_config_value(capsys):
    assert run_command(["inspect-layout", "--profile", "desk", "--decoder-width", "2"]) == 3
    assert "C_dec" in capsys.readouterr().err


@pytest.fixture(scope="module")
def perfect_checkpoint(tmp_path_factory):
    """A model whose head emits +50 everywhere, with all-foreground ground truth."""
    root = tmp_path_factory.mktemp("perfect")
    cfg = validate_config({"profile": "tiny"})
    model = build_model(cfg)
    with torch.no_grad():
        model.statics.head.weight.zero_()
        model.statics.head.bias.fill_(50.0)
    ck = root / "perfect.pt"
    save_checkpoint(ck, model, torch.optim.Adam(model.parameters()), TrainState(), np.random.default_rng(0))
    rng = np.random.default_rng(0)
    samples = [Sample(rng.integers(0, 255, (16, 16), dtype=np.uint8), np.ones((16, 16), np.uint8),
                      scen, f"p{i}") for i, scen in enumerate(["sky", "ground", "sky", "ground"])]
    write_dataset(root / "data", {"test": samples})
    return ck, root / "data"


def test_eval_perfect_fixture(perfect_checkpoint, tmp_path):
    ck, data = perfect_checkpoint
    out = tmp_path / "m.csv"
    assert run_command(["eval", "--checkpoint", str(ck), "--data", str(data), "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert rows[0]["scenario"] == "all"
    assert float(rows[0]["IoU"]) == 1.0 and float(rows[0]["Fa"]) == 0.0 and float(rows[0]["Pd"]) == 1.0


def test_infer_writes_same_size_masks(perfect_checkpoint, tmp_path):
    ck, _ = perfect_checkpoint
    src = tmp_path / "in"
    src.mkdir()
    Image.fromarray(np.zeros((20, 30), np.uint8)).save(src / "a.png")
    Image.fromarray(np.zeros((16, 16), np.uint8)).save(src / "b.png")
    out = tmp_path / "out"
    assert run_command(["infer", "--checkpoint", str(ck), "--input", str(src), "--output", str(out),
                        "--dump-highpass", str(tmp_path / "hp")]) == 0
    a = np.asarray(Image.open(out / "a.png"))
    assert a.shape == (20, 30) and (a == 255).all()
    assert np.asarray(Image.open(out / "b.png")).shape == (16, 16)
    assert (tmp_path / "hp" / "a_hp.png").exists()


def test_drift_report_csv(perfect_checkpoint, tmp_path):
    ck, data = perfect_checkpoint
    out = tmp_path / "d.csv"
    assert run_command(["drift-report", "--checkpoint", str(ck), "--data", str(data), "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert [r["scenario"] for r in rows] == ["ground", "sky", "ALL"]
    assert float(rows[-1]["separation_ratio"]) > 0


def test_missing_checkpoint():
    assert run_command(["eval", "--checkpoint", "nope.pt", "--data", "."]) == 4


def test_train_twice_is_bitwise_identical(tiny_data, tmp_path):
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run_command(["train", "--data", str(tiny_data), "--out", str(out), "--seed", "1",
                            "--profile", "tiny", "--max-steps", "4"]) == 0
        logs.append((out / "train_log.csv").read_bytes())
    assert logs[0] == logs[1]
    assert (tmp_path / "a" / "best.pt").exists()
