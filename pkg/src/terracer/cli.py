"""``terracer`` command line: dataset, train, eval, predict, params."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .autodiff.checkpoint import CheckpointError
from .autodiff.ops import ConfigurationError
from .models import COUNTERPARTS, PRESETS, build_model, count_parameters, preset
from .models.config import BuildError
from .parallel import get_num_threads, set_num_threads

log = logging.getLogger("terracer")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terracer", description="Land-cover segmentation from multispectral scenes.")
    p.add_argument("--version", action="version", version=f"terracer {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $TERRACER_THREADS or 1)")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    ds = sub.add_parser("dataset", help="synthesize or validate a dataset")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True, metavar="ACTION")
    synth = ds_sub.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--scenes", type=int, default=10)
    synth.add_argument("--size", type=int, default=128, help="scene edge in 20 m pixels")
    synth.add_argument("--classes", type=int, default=5, help="land classes (cloud class added when --clouds > 0)")
    synth.add_argument("--clouds", type=float, default=0.0, help="fraction of label cells under cloud")
    synth.add_argument("--mosaic-pairs", type=int, default=0, help="class pairs told apart only by texture")
    synth.add_argument("--test-fraction", type=float, default=0.3)
    synth.add_argument("--noise", type=float, default=0.03, help="reflectance noise sigma")
    synth.add_argument("--out", required=True, type=Path)
    val = ds_sub.add_parser("validate", help="check a manifest and every raster it references")
    val.add_argument("manifest", type=Path)

    tr = sub.add_parser("train", help="train a model from a JSON config")
    tr.add_argument("--config", required=True, type=Path)
    tr.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    tr.add_argument("--manifest", default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--max-steps", type=int, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--checkpoint-dir", default=None)

    ev = sub.add_parser("eval", help="score a checkpoint on a manifest split")
    ev.add_argument("--ckpt", required=True, type=Path)
    ev.add_argument("--manifest", required=True, type=Path)
    ev.add_argument("--split", default="test", choices=["train", "test"])
    ev.add_argument("--erode-m", type=float, default=200.0)
    ev.add_argument("--measure", default="boundary", choices=["boundary", "center"])
    ev.add_argument("--tile-px", type=int, default=None)
    ev.add_argument("--report", type=Path, default=None)

    pr = sub.add_parser("predict", help="write a label map for one scene")
    pr.add_argument("--ckpt", required=True, type=Path)
    pr.add_argument("--scene", required=True, help="scene id")
    pr.add_argument("--manifest", type=Path, default=None, help="defaults to the manifest the model was trained on")
    pr.add_argument("--tile-px", type=int, default=None)
    pr.add_argument("--out", required=True, type=Path)

    pa = sub.add_parser("params", help="parameter count and scales of a preset")
    pa.add_argument("preset")
    pa.add_argument("--bands", type=int, default=None)
    pa.add_argument("--classes", type=int, default=None)
    return p


# ---------------------------------------------------------------- commands

def cmd_dataset(args) -> int:
    from .raster import synthesize_dataset, validate_manifest

    if args.dataset_command == "synth":
        if args.scenes < 1 or args.size < 1 or args.classes < 1:
            raise UsageError("--scenes, --size and --classes must be positive")
        path = synthesize_dataset(
            args.out, seed=args.seed, scenes=args.scenes, size_px=args.size, num_classes=args.classes,
            cloud_fraction=args.clouds, test_fraction=args.test_fraction, mosaic_pairs=args.mosaic_pairs,
            noise_sigma=args.noise,
        )
        log.info("wrote %s", path)
        return EXIT_OK
    problems = validate_manifest(args.manifest)
    for p in problems:
        log.error("%s", p)
    if problems:
        return EXIT_FAILURE
    log.info("%s: ok", args.manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import load_train_config, train

    if not args.config.exists():
        raise FileNotFoundError(f"config not found: {args.config}")
    cfg = load_train_config(args.config)
    flags = {
        "manifest": args.manifest, "epochs": args.epochs, "max_steps": args.max_steps,
        "batch_size": args.batch_size, "seed": args.seed, "checkpoint_dir": args.checkpoint_dir,
    }
    cfg = replace(cfg, **{k: v for k, v in flags.items() if v is not None})
    if not Path(cfg.manifest).exists():
        raise FileNotFoundError(f"manifest not found: {cfg.manifest}")
    log.info("seed %d", cfg.seed)
    result = train(cfg, resume=args.resume)
    log.info("finished after %d steps; checkpoint %s", result.steps, result.checkpoint)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate, write_report
    from .raster.manifest import load_manifest
    from .training import load_trained

    model, meta = load_trained(args.ckpt)
    manifest = load_manifest(args.manifest)
    _, report = evaluate(
        model, manifest, args.split, args.erode_m, meta.get("strategy"), meta.get("normalization"),
        meta.get("band_mode", "all13"), args.measure, args.tile_px,
    )
    log.info("OA %.4f over %d pixels (%.1f%% excluded)", report["oa"] or 0.0, report["evaluated_pixels"],
             100 * report["excluded_fraction"])
    if args.report:
        write_report(report, args.report)
        log.info("wrote %s", args.report)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .evaluation import predict_map, scene_inputs, write_ppm
    from .raster.erb import write_label_map
    from .raster.manifest import load_manifest
    from .training import load_trained

    model, meta = load_trained(args.ckpt)
    manifest_path = args.manifest or meta.get("manifest")
    if not manifest_path:
        raise UsageError("--manifest is required: the checkpoint does not record one")
    manifest = load_manifest(manifest_path)
    scene = manifest.load(args.scene)
    bands = scene_inputs(scene, meta.get("normalization"), meta.get("band_mode", "all13"))
    strategy = meta.get("strategy", "fine")
    labels = predict_map(model, bands, strategy, scene.label_factor, args.tile_px)
    res = scene.resolution_m if strategy == "fine" else scene.label_resolution_m
    codes = scene.class_table.id_to_code(labels)
    write_label_map(args.out, codes, res, scene=scene.id, strategy=strategy, values="class codes")
    preview = args.out.with_suffix(".ppm")
    write_ppm(preview, labels)
    log.info("wrote %s and %s", args.out, preview)
    return EXIT_OK


def cmd_params(args) -> int:
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; available presets: {', '.join(PRESETS)}")
    cfg = preset(args.preset, input_bands=args.bands, num_classes=args.classes)
    n = count_parameters(build_model(cfg))
    row = {"preset": args.preset, "bands": cfg.input_bands, "classes": cfg.num_classes, "params": n, "scales": cfg.num_scales}
    line = f"{args.preset}  bands={cfg.input_bands}  classes={cfg.num_classes}  params={n:,}  scales={cfg.num_scales}"
    if args.preset in COUNTERPARTS:
        other = COUNTERPARTS[args.preset]
        ref = count_parameters(build_model(preset(other, input_bands=cfg.input_bands, num_classes=cfg.num_classes)))
        reduction = 100.0 * (ref - n) / ref
        row.update({"counterpart": other, "counterpart_params": ref, "reduction_pct": round(reduction, 2)})
        line += f"  vs {other}={ref:,}  reduction={reduction:.1f}%"
    print(line)
    log.debug("%s", json.dumps(row))
    return EXIT_OK


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "params": cmd_params}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=getattr(logging, args.log_level), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )
    if args.threads is not None:
        if args.threads < 1:
            parser.print_usage(sys.stderr)
            print("terracer: error: --threads must be at least 1", file=sys.stderr)
            return EXIT_USAGE
        set_num_threads(args.threads)
    log.debug("argv %s, threads %d", argv if argv is not None else sys.argv[1:], get_num_threads())
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"terracer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError, ValueError, KeyError, RuntimeError, CheckpointError,
            ConfigurationError, BuildError) as exc:
        log.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
