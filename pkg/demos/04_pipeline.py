"""End to end through the command line: synthesize, train, score, map.

Everything lands in a scratch directory (or the one given as argv[1]).
Takes a few seconds on one core.

Run: python demos/04_pipeline.py [workdir]
"""
import json
import sys
import tempfile
from pathlib import Path

from terracer.cli import main


def run(*argv):
    print("$ terracer", " ".join(argv))
    code = main(list(argv))
    if code:
        sys.exit(code)


work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="terracer-demo-"))
data = work / "data"
run("dataset", "synth", "--seed", "1", "--scenes", "4", "--size", "96", "--classes", "4", "--out", str(data))
run("dataset", "validate", str(data / "manifest.json"))

config = work / "train.json"
config.write_text(json.dumps({
    "preset": "dn-e23-g12",
    "manifest": str(data / "manifest.json"),
    "strategy": "fine",
    "epochs": 3,
    "batch_size": 4,
    "tile_px": 32,
    "stride_px": 32,
    "optimizer": {"kind": "adam", "lr": 0.003},
    "lr_schedule": "cosine",
    "checkpoint_dir": str(work / "ckpt"),
    "seed": 7,
}, indent=2))
run("train", "--config", str(config))

ckpt = work / "ckpt" / "last.tckpt"
report = work / "report.json"
run("eval", "--ckpt", str(ckpt), "--manifest", str(data / "manifest.json"), "--split", "test",
    "--erode-m", "40", "--report", str(report))
summary = json.loads(report.read_text())
print(f"held-out OA {summary['oa']:.3f} with {summary['excluded_fraction']:.1%} of pixels near borders excluded")

scene = json.loads((data / "manifest.json").read_text())["scenes"][-1]["id"]
run("predict", "--ckpt", str(ckpt), "--manifest", str(data / "manifest.json"), "--scene", scene,
    "--out", str(work / "map.erb1"))
print(f"label raster and preview written to {work}")
