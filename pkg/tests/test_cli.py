import json

import numpy as np
import pytest

from terracer.cli import main
from terracer.evaluation import read_ppm
from terracer.raster import read_label_map


@pytest.mark.parametrize("argv", [["--help"], ["train", "--help"], ["eval", "--help"], ["dataset", "synth", "--help"]])
def test_help_exits_zero(argv, capsys):
    assert main(argv) == 0
    assert "usage" in capsys.readouterr().out


def test_missing_manifest_is_a_runtime_error(tmp_path, capsys):
    assert main(["dataset", "validate", str(tmp_path / "nope.json")]) == 1
    assert "nope.json" in capsys.readouterr().err


def test_unknown_preset_is_a_usage_error(capsys):
    assert main(["params", "resnet-50"]) == 2
    assert "dn-e23-g12" in capsys.readouterr().err


def test_bad_flag_is_a_usage_error(capsys):
    assert main(["params", "--bogus"]) == 2


def test_params_reports_reduction(capsys):
    assert main(["params", "dn3d-e444-g16"]) == 0
    out = capsys.readouterr().out
    assert "scales=4" in out and "reduction=" in out and "dn-e444-g16" in out


def test_pipeline_smoke(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["dataset", "synth", "--seed", "4", "--scenes", "3", "--size", "64", "--classes", "3", "--out", str(data)]) == 0
    manifest = data / "manifest.json"
    assert main(["dataset", "validate", str(manifest)]) == 0

    config = {
        "preset": "dn-e23-g12", "manifest": "data/manifest.json", "strategy": "fine", "epochs": 50,
        "batch_size": 2, "tile_px": 32, "stride_px": 32, "max_steps": 50,
        "checkpoint_dir": str(tmp_path / "ck"), "model": {"growth": 4, "stem_filters": 8},
        "optimizer": {"kind": "adam", "lr": 0.003},
    }
    (tmp_path / "train.json").write_text(json.dumps(config))
    assert main(["train", "--config", str(tmp_path / "train.json")]) == 0
    ckpt = tmp_path / "ck" / "last.tckpt"
    assert ckpt.exists()
    records = [json.loads(x) for x in (tmp_path / "ck" / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == 50

    report_path = tmp_path / "report.json"
    assert main(["eval", "--ckpt", str(ckpt), "--manifest", str(manifest), "--erode-m", "200", "--report", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["strategy"] == "fine" and 0.0 <= report["oa"] <= 1.0

    out = tmp_path / "pred.erb1"
    assert main(["predict", "--ckpt", str(ckpt), "--manifest", str(manifest), "--scene", "s004-002", "--out", str(out)]) == 0
    labels, meta = read_label_map(out)
    assert labels.shape == (64, 64) and meta["resolution_m"] == 20
    assert set(np.unique(labels)) <= {0, 1, 2}
    assert read_ppm(out.with_suffix(".ppm")).shape == (64, 64, 3)


def test_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "x.tckpt"), "--manifest", str(tmp_path / "m.json")]) == 1
