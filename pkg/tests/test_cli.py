import json
import subprocess
import sys

import pytest
import torch
from PIL import Image

from prdehaze.cli import main
from prdehaze.data import DatasetManifest, write_rgb
from test_data import tree_digest

SMOKE = {
    "data": {"counts": {"train": 8, "val": 2, "test": 2}, "size": 32, "seed": 3},
    "model": {"widths": [4, 8, 8], "residual_width": 4, "light_width": 4, "refine_width": 4,
              "refine_blocks": 2},
    "train": {"steps": 200, "batch_size": 2, "patch": 32, "checkpoint_every": 100},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    doc = json.loads(json.dumps(SMOKE))
    doc["data"]["root"] = str(root / "data")
    doc["train"]["out_dir"] = str(root / "run")
    doc["eval"] = {"out_dir": str(root / "eval")}
    config = root / "config.json"
    config.write_text(json.dumps(doc))
    assert main(["synthesize", "--config", str(config)]) == 0
    assert main(["train", "--config", str(config), "--strict"]) == 0
    return root, config


def test_synthesize_writes_valid_manifests(workspace):
    root, _ = workspace
    for split, n in (("train", 8), ("val", 2), ("test", 2)):
        manifest = DatasetManifest.read(root / "data" / split)
        manifest.validate()
        assert manifest.count == n and manifest.split == split
    resolved = json.loads((root / "data" / "config.resolved.json").read_text())
    assert resolved["loss"]["alpha1"] == 1.0 and resolved["data"]["size"] == 32


def test_synthesize_is_idempotent(workspace, tmp_path):
    _, config = workspace
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synthesize", "--config", str(config), "--out", str(a)]) == 0
    assert main(["synthesize", "--config", str(config), "--out", str(b)]) == 0
    before = tree_digest(a)
    assert main(["synthesize", "--config", str(config), "--out", str(a)]) == 0
    assert tree_digest(a) == before
    assert {p.name for p in a.rglob("*.png")} == {p.name for p in b.rglob("*.png")}
    assert (a / "train" / "manifest.json").read_bytes() == (b / "train" / "manifest.json").read_bytes()


def test_train_outputs(workspace):
    root, _ = workspace
    run = root / "run"
    for name in ("last.ckpt", "loss_log.csv", "val_log.csv", "loss_curve.png", "config.resolved.json"):
        assert (run / name).exists(), name
    assert len((run / "loss_log.csv").read_text().splitlines()) == 201


def test_train_resume_is_deterministic(workspace, tmp_path):
    root, config = workspace
    doc = json.loads(config.read_text())
    doc["train"]["steps"] = 120
    short = tmp_path / "short.json"
    short.write_text(json.dumps(doc))
    out = tmp_path / "resumed"
    assert main(["train", "--config", str(short), "--out", str(out), "--strict"]) == 0
    assert main(["train", "--config", str(config), "--out", str(out), "--resume", "--strict"]) == 0
    assert (out / "loss_log.csv").read_bytes() == (root / "run" / "loss_log.csv").read_bytes()


def test_train_missing_dataset(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"data": {"root": str(tmp_path / "nowhere")}}))
    assert main(["train", "--config", str(config)]) == 2
    assert "nowhere" in capsys.readouterr().err


def test_malformed_json_names_line(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text('{\n  "data": {\n    "seed": 1,,\n  }\n}\n')
    assert main(["synthesize", "--config", str(config)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"train": {"epochs": 3}}))
    assert main(["synthesize", "--config", str(config)]) == 1
    assert "train.epochs" in capsys.readouterr().err


def test_dehaze_writes_three_stages(workspace, tmp_path):
    root, _ = workspace
    inputs = tmp_path / "in"
    write_rgb(inputs / "photo.png", torch.rand(3, 30, 45, generator=torch.Generator().manual_seed(0)))
    outs = []
    for n in range(2):
        out = tmp_path / f"out{n}"
        assert main(["dehaze", "--checkpoint", str(root / "run" / "last.ckpt"),
                     "--input", str(inputs), "--out", str(out)]) == 0
        outs.append(out)
    for stage in ("free", "prelim", "refine"):
        path = outs[0] / stage / "photo.png"
        with Image.open(path) as im:
            assert im.size == (45, 30)
        assert path.read_bytes() == (outs[1] / stage / "photo.png").read_bytes()


def test_evaluate_writes_results_and_figures(workspace):
    root, config = workspace
    assert main(["evaluate", "--config", str(config), "--checkpoint", str(root / "run" / "last.ckpt")]) == 0
    ev = root / "eval"
    lines = (ev / "results.csv").read_text().splitlines()
    assert lines[0].startswith("id,psnr_iter1,psnr_iter2,psnr_iter3,ssim_iter1")
    assert lines[-1].startswith("MEAN,") and len(lines) == 4
    for name in ("iterations.png", "stages.png", "config.resolved.json"):
        assert (ev / name).exists()
    assert len(list((ev / "out" / "refine").glob("*.png"))) == 2


def test_missing_checkpoint_is_runtime_error(workspace, tmp_path):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt")]) == 2


@pytest.mark.parametrize("command", ["synthesize", "train", "dehaze", "evaluate"])
def test_help_lists_flags(command):
    result = subprocess.run([sys.executable, "-m", "prdehaze.cli", command, "--help"],
                            capture_output=True, text=True)
    assert result.returncode == 0
    for flag in ("--config", "--out"):
        assert flag in result.stdout
    if command != "synthesize":
        assert "--checkpoint" in result.stdout


def test_usage_error_exit_code():
    result = subprocess.run([sys.executable, "-m", "prdehaze.cli", "train", "--bogus"],
                            capture_output=True, text=True)
    assert result.returncode == 1
    result = subprocess.run([sys.executable, "-m", "prdehaze.cli"], capture_output=True, text=True)
    assert result.returncode == 1
