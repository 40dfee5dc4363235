"""Fine (20 m) and coarse multiscale (300 m) training loops."""
from __future__ import annotations

import json
import logging
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.nn import Module
from .autodiff.optim import build_optimizer
from .autodiff.tensor import Tensor, make_result
from .models import build_model, config_from_dict, config_to_dict, preset
from .models.config import DenseNetConfig, ModelConfig, SegNetConfig
from .raster.classes import NO_DATA
from .raster.manifest import load_manifest
from .raster.resample import grid_mean_matrix
from .raster.scene import NINE_BANDS, band_subset, compute_normalization, normalize_bands
from .raster.tiling import tile_iterator

log = logging.getLogger(__name__)

STRATEGIES = ("fine", "coarse")
LR_SCHEDULES = ("constant", "cosine")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: Optional[Path]):
        self.step = step
        self.last_good = last_good
        where = f"; last good checkpoint: {last_good}" if last_good else "; no checkpoint was written yet"
        super().__init__(f"loss became non-finite at step {step}{where}")


@dataclass(frozen=True)
class LossWeights:
    """Deep-supervision weights: ``averaged`` for the mean of all heads, ``head`` for each head.

    ``per_head`` overrides ``head`` with one weight per head (finest last).
    """

    averaged: float = 1.0
    head: float = 0.25
    per_head: Optional[tuple] = None

    def head_weights(self, n: int) -> tuple:
        if self.per_head is None:
            return (self.head,) * n
        if len(self.per_head) != n:
            raise ops.ConfigurationError(f"{len(self.per_head)} head weights for {n} heads")
        return tuple(self.per_head)


@dataclass
class TrainConfig:
    preset: str = "dn-e23-g12"
    manifest: str = ""
    strategy: str = "fine"
    epochs: int = 1
    batch_size: int = 8
    tile_px: int = 64
    stride_px: int = 64
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3})
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    max_steps: Optional[int] = None
    flips: bool = True
    band_mode: Optional[str] = None
    target_train_oa: Optional[float] = None
    lr_schedule: str = "constant"
    model: dict = field(default_factory=dict)
    prefetch: int = 2

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ops.ConfigurationError(f"unknown training config fields: {sorted(extra)}")
        if isinstance(doc.get("loss_weights"), dict):
            lw = dict(doc["loss_weights"])
            if lw.get("per_head") is not None:
                lw["per_head"] = tuple(lw["per_head"])
            doc["loss_weights"] = LossWeights(**lw)
        return cls(**doc)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss_weights"] = asdict(self.loss_weights)
        return out

    def model_config(self, num_classes: int) -> ModelConfig:
        overrides = dict(self.model)
        overrides.setdefault("num_classes", num_classes)
        base = preset(self.preset)
        if isinstance(base, DenseNetConfig) and not base.first_block_3d and self.resolved_band_mode() == "nine_b1_to_b8a":
            overrides.setdefault("input_bands", len(NINE_BANDS))
        return preset(self.preset, **overrides)

    def resolved_band_mode(self) -> str:
        if self.band_mode:
            return self.band_mode
        base = preset(self.preset)
        return "nine_b1_to_b8a" if getattr(base, "first_block_3d", False) else "all13"

    def validate(self) -> "TrainConfig":
        if self.strategy not in STRATEGIES:
            raise ops.ConfigurationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        base = preset(self.preset)
        if self.strategy == "coarse" and not isinstance(base, SegNetConfig):
            raise ops.ConfigurationError("the coarse strategy needs a SegNet preset")
        if self.strategy == "fine" and isinstance(base, SegNetConfig):
            raise ops.ConfigurationError("SegNet presets train with the coarse strategy")
        if self.tile_px % 32:
            raise ops.ConfigurationError(f"tile_px must be divisible by 32, got {self.tile_px}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ops.ConfigurationError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.stride_px < 1:
            raise ops.ConfigurationError("batch_size, epochs and stride_px must be positive")
        return self


def scheduled_lr(base_lr: float, schedule: str, step: int, total_steps: int) -> float:
    """Learning rate for the 0-based ``step``; cosine decays towards zero at ``total_steps``."""
    if schedule == "constant" or total_steps < 1:
        return base_lr
    progress = min(step / total_steps, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def load_train_config(path) -> TrainConfig:
    doc = json.loads(Path(path).read_text())
    cfg = TrainConfig.from_dict(doc)
    if cfg.manifest and not Path(cfg.manifest).is_absolute():
        cfg = replace(cfg, manifest=str((Path(path).parent / cfg.manifest).resolve()))
    return cfg


# ---------------------------------------------------------------- losses

def pooling_matrices(n_px: int, factor: int, offsets: Sequence[int], n_cells: int) -> np.ndarray:
    """``(N, n_cells, n_px)`` box-mean weights, one per window offset, zero-padded."""
    out = np.zeros((len(offsets), n_cells, n_px))
    for i, off in enumerate(offsets):
        m = grid_mean_matrix(n_px, factor, int(off))
        if m.shape[0] > n_cells:
            raise ops.ConfigurationError(f"window at offset {off} covers {m.shape[0]} cells, labels have {n_cells}")
        out[i, : m.shape[0]] = m
    return out


def _pool_operators(head_shapes, size, factor, offsets, cells):
    """Compose bilinear upsampling to ``size`` with box pooling onto ``cells``.

    Both maps are linear, so ``pool(up(h)) = (P B) h (P B)^T`` per axis.
    """
    rows_pool = pooling_matrices(size[0], factor, offsets[:, 0], cells[0])
    cols_pool = pooling_matrices(size[1], factor, offsets[:, 1], cells[1])
    operators = []
    for h, w in head_shapes:
        operators.append((rows_pool @ ops.bilinear_matrix(h, size[0]), cols_pool @ ops.bilinear_matrix(w, size[1])))
    return operators


def multiscale_pooled(head_logits: Sequence[Tensor], size, factor: int, offsets=None, cells=None) -> tuple:
    """Per-head pooled logits and their average on the label grid.

    ``size`` is the input extent the heads are interpolated to; ``offsets``
    gives each sample's (row, col) position in its scene so partial cells
    line up with the label grid.
    """
    n = head_logits[0].shape[0]
    offsets = np.zeros((n, 2), dtype=int) if offsets is None else np.asarray(offsets, dtype=int).reshape(n, 2)
    if cells is None:
        cells = tuple(
            max(grid_mean_matrix(size[a], factor, int(o)).shape[0] for o in offsets[:, a]) for a in (0, 1)
        )
    ops_ = _pool_operators([h.shape[-2:] for h in head_logits], size, factor, offsets, cells)
    pooled = [ops.resample_separable(h, r, c) for h, (r, c) in zip(head_logits, ops_)]
    total = pooled[0]
    for p in pooled[1:]:
        total = total + p
    return pooled, total * (1.0 / len(pooled))


def loss_multiscale(
    head_logits: Sequence[Tensor],
    labels: np.ndarray,
    weights: LossWeights = LossWeights(),
    *,
    size=None,
    factor: int = 15,
    offsets=None,
    ignore_value: int = NO_DATA,
    return_average: bool = False,
):
    """Deeply supervised coarse loss.

    ``averaged * CE(pool(mean_i up(h_i))) + sum_i w_i * CE(pool(up(h_i)))``
    where ``up`` is bilinear to ``size`` and ``pool`` is the ``factor`` box
    mean onto the ``labels`` grid. Zero-weight terms are skipped.
    """
    head_logits = list(head_logits)
    if not head_logits:
        raise ops.ConfigurationError("loss_multiscale needs at least one head")
    labels = np.asarray(labels)
    if size is None:
        size = max((tuple(h.shape[-2:]) for h in head_logits), key=lambda s: s[0] * s[1])
    pooled, average = multiscale_pooled(head_logits, size, factor, offsets, labels.shape[-2:])
    terms = []
    if weights.averaged:
        terms.append(ops.softmax_cross_entropy(average, labels, ignore_value) * float(weights.averaged))
    for w, p in zip(weights.head_weights(len(pooled)), pooled):
        if w:
            terms.append(ops.softmax_cross_entropy(p, labels, ignore_value) * float(w))
    if not terms:
        raise ops.ConfigurationError("every loss weight is zero")
    loss = terms[0]
    for t in terms[1:]:
        loss = loss + t
    return (loss, average) if return_average else loss


# ---------------------------------------------------------------- data

@dataclass
class TrainingData:
    scenes: list
    tiles: list          # (scene index, row, col)
    normalization: dict
    band_mode: str
    num_classes: int
    class_table: object


def prepare_data(cfg: TrainConfig) -> TrainingData:
    manifest = load_manifest(cfg.manifest)
    band_mode = cfg.resolved_band_mode()
    raw = manifest.load_split("train")
    if not raw:
        raise ops.ConfigurationError(f"{cfg.manifest}: no scenes in the train split")
    norm = manifest.normalization or compute_normalization(raw)
    scenes = []
    for s in raw:
        s = band_subset(s, band_mode)
        s = replace(s, bands=normalize_bands(s.bands, s.band_ids, norm))
        scenes.append(s)
    tiles = [
        (i, t.row, t.col)
        for i, s in enumerate(scenes)
        for t in tile_iterator(s, cfg.tile_px, cfg.stride_px, seed=None)
    ]
    if not tiles:
        raise ops.ConfigurationError(f"no {cfg.tile_px}-px tiles fit the training scenes")
    return TrainingData(scenes, tiles, norm, band_mode, len(manifest.class_table), manifest.class_table)


@dataclass
class Batch:
    bands: np.ndarray      # (N, B, t, t)
    labels: np.ndarray     # fine: (N, t, t); coarse: (N, hc, wc)
    offsets: np.ndarray    # (N, 2) pixel offset of each tile in its scene
    flips: np.ndarray      # (N, 2) vertical / horizontal flip flags


def epoch_plan(n_tiles: int, batch_size: int, seed: int, epoch: int, flips: bool) -> list:
    """Deterministic (tile order, flip flags) chunks for one epoch."""
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(n_tiles)
    flip = rng.integers(0, 2, size=(n_tiles, 2)).astype(bool) if flips else np.zeros((n_tiles, 2), bool)
    return [(order[i:i + batch_size], flip[i:i + batch_size]) for i in range(0, n_tiles, batch_size)]


def assemble_batch(data: TrainingData, picks, flips, tile_px: int, strategy: str) -> Batch:
    bands, labels, offsets = [], [], []
    for k, (v, h) in zip(picks, flips):
        si, r, c = data.tiles[k]
        scene = data.scenes[si]
        x = scene.bands[:, r:r + tile_px, c:c + tile_px]
        if strategy == "fine":
            y = scene.fine_labels()[r:r + tile_px, c:c + tile_px]
            if v:
                y = y[::-1]
            if h:
                y = y[:, ::-1]
        else:
            f = scene.label_factor
            y = scene.labels[r // f:(r + tile_px - 1) // f + 1, c // f:(c + tile_px - 1) // f + 1]
        if v:
            x = x[:, ::-1]
        if h:
            x = x[:, :, ::-1]
        bands.append(x)
        labels.append(y)
        offsets.append((r, c))
    if strategy == "coarse":
        hc = max(y.shape[0] for y in labels)
        wc = max(y.shape[1] for y in labels)
        padded = np.full((len(labels), hc, wc), NO_DATA, dtype=np.int64)
        for i, y in enumerate(labels):
            padded[i, : y.shape[0], : y.shape[1]] = y
        labels_arr = padded
    else:
        labels_arr = np.stack(labels).astype(np.int64)
    return Batch(
        np.ascontiguousarray(np.stack(bands), dtype=np.float32),
        labels_arr,
        np.array(offsets, dtype=int),
        np.array(flips, dtype=bool).reshape(-1, 2),
    )


class Prefetcher:
    """Bounded producer/consumer queue assembling batches on a worker thread."""

    _DONE = object()

    def __init__(self, jobs, build, depth: int = 2):
        self._queue: queue.Queue = queue.Queue(maxsize=max(1, depth))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(list(jobs), build), daemon=True)
        self._thread.start()

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self, jobs, build):
        try:
            for job in jobs:
                if not self._put(build(job)):
                    return
        except BaseException as exc:  # surfaced on the consumer side
            self._put(exc)
            return
        self._put(self._DONE)

    def __iter__(self):
        while True:
            item = self._queue.get()
            if item is self._DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=5)


# ---------------------------------------------------------------- steps

def coarse_forward(model: Module, batch: Batch, weights: LossWeights, factor: int):
    heads = model(Tensor(batch.bands))
    t = batch.bands.shape[-1]
    # undo flips on the heads so pooling lines up with the unflipped cell labels
    heads = [_unflip(h, batch.flips) for h in heads]
    loss, avg = loss_multiscale(
        heads, batch.labels, weights, size=(t, t), factor=factor, offsets=batch.offsets, return_average=True
    )
    return loss, avg.data.argmax(axis=1)


def _unflip(x: Tensor, flips: np.ndarray) -> Tensor:
    """Per-sample vertical/horizontal flips (self-inverse, so backward reuses it)."""
    if not flips.any():
        return x

    def apply(arr):
        out = arr.copy()
        for i, (v, h) in enumerate(flips):
            if v:
                out[i] = out[i][..., ::-1, :]
            if h:
                out[i] = out[i][..., ::-1]
        return out

    return make_result(apply(x.data), (x,), lambda g: (apply(g),), "flip")


def fine_forward(model: Module, batch: Batch):
    logits = model(Tensor(batch.bands))
    loss = ops.softmax_cross_entropy(logits, batch.labels)
    return loss, logits.data.argmax(axis=1)


def _oa_counts(pred: np.ndarray, labels: np.ndarray) -> tuple:
    valid = labels != NO_DATA
    return int((pred[valid] == labels[valid]).sum()), int(valid.sum())


# ---------------------------------------------------------------- checkpoints

def checkpoint_arrays(model: Module, optimizer) -> dict:
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"optim.{k}": v for k, v in optimizer.state_dict().items()})
    return arrays


def write_checkpoint(path, model, optimizer, meta: dict) -> Path:
    path = Path(path)
    save_checkpoint(path, checkpoint_arrays(model, optimizer))
    sidecar = Path(f"{path}.json")
    tmp = Path(f"{sidecar}.tmp")
    tmp.write_text(json.dumps(meta, indent=2))
    tmp.replace(sidecar)
    return path


def read_checkpoint_meta(path) -> dict:
    sidecar = Path(f"{path}.json")
    if not sidecar.exists():
        raise FileNotFoundError(f"checkpoint metadata not found: {sidecar}")
    return json.loads(sidecar.read_text())


def load_trained(path, dtype=np.float32):
    """Rebuild the model stored at ``path``; returns ``(model, meta)`` in eval mode."""
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta = read_checkpoint_meta(path)
    cfg = config_from_dict(meta["model"])
    model = build_model(cfg, seed=0, dtype=dtype)
    arrays = load_checkpoint(path)
    model.load_state_dict({k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})
    return model.eval(), meta


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    model: Module
    optimizer: object
    metrics: list
    checkpoint: Optional[Path]
    steps: int
    epochs_run: int
    epoch_oa: list = field(default_factory=list)


def train(cfg: TrainConfig, resume=None, data: Optional[TrainingData] = None) -> TrainResult:
    """Run ``cfg`` to completion (epochs, ``max_steps`` or ``target_train_oa``)."""
    cfg.validate()
    data = data or prepare_data(cfg)
    model_cfg = cfg.model_config(data.num_classes)
    model = build_model(model_cfg, seed=cfg.seed)
    opt_spec = dict(cfg.optimizer)
    kind = opt_spec.pop("kind", "adam")
    optimizer = build_optimizer(kind, model.parameters(), **opt_spec)
    factor = data.scenes[0].label_factor
    base_lr = optimizer.lr
    steps_per_epoch = len(epoch_plan(len(data.tiles), cfg.batch_size, cfg.seed, 0, False))
    planned = cfg.epochs * steps_per_epoch
    total_steps = min(planned, cfg.max_steps) if cfg.max_steps is not None else planned

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = ckpt_dir / "metrics.jsonl"
    step, start_epoch, skip = 0, 0, 0
    if resume is not None:
        arrays = load_checkpoint(resume)
        meta = read_checkpoint_meta(resume)
        model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
        optimizer.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("optim.")})
        step = int(meta["step"])
        start_epoch, skip = int(meta["epoch"]), int(meta["batch_in_epoch"])
        log.info("resumed from %s at step %d (epoch %d, batch %d)", resume, step, start_epoch, skip)
    else:
        metrics_path.write_text("")

    meta_base = {
        "model": config_to_dict(model_cfg),
        "preset": cfg.preset,
        "strategy": cfg.strategy,
        "band_mode": data.band_mode,
        "normalization": data.normalization,
        "class_table": data.class_table.to_dict(),
        "manifest": str(cfg.manifest),
        "seed": cfg.seed,
        "train_config": cfg.to_dict(),
    }
    last_good: Optional[Path] = Path(resume) if resume is not None else None
    metrics, epoch_oa = [], []
    model.train()
    stop = False
    epoch = start_epoch
    position = (start_epoch, skip)
    log.info("training %s (%s) on %d tiles, seed %d", cfg.preset, cfg.strategy, len(data.tiles), cfg.seed)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))

    def save(name, epoch_, batch_in_epoch):
        meta = dict(meta_base, step=step, epoch=epoch_, batch_in_epoch=batch_in_epoch)
        return write_checkpoint(ckpt_dir / name, model, optimizer, meta)

    while epoch < cfg.epochs and not stop:
        plan = epoch_plan(len(data.tiles), cfg.batch_size, cfg.seed, epoch, cfg.flips)
        jobs = plan[skip:]
        feed = Prefetcher(jobs, lambda job: assemble_batch(data, job[0], job[1], cfg.tile_px, cfg.strategy), cfg.prefetch)
        correct = total = 0
        batch_idx = skip
        try:
            with metrics_path.open("a") as mlog:
                for batch in feed:
                    t0 = time.perf_counter()
                    optimizer.lr = scheduled_lr(base_lr, cfg.lr_schedule, step, total_steps)
                    try:
                        if cfg.strategy == "fine":
                            loss, pred = fine_forward(model, batch)
                        else:
                            loss, pred = coarse_forward(model, batch, cfg.loss_weights, factor)
                        loss_value = float(loss.item())
                        if not math.isfinite(loss_value):
                            raise FloatingPointError("non-finite loss")
                        model.zero_grad()
                        loss.backward()
                        optimizer.step()
                        if not all(np.isfinite(p.data).all() for p in model.parameters()):
                            raise FloatingPointError("non-finite parameters")
                    except FloatingPointError:
                        raise TrainingDiverged(step + 1, last_good) from None
                    step += 1
                    batch_idx += 1
                    c, n = _oa_counts(pred, batch.labels)
                    correct += c
                    total += n
                    record = {
                        "step": step,
                        "loss": loss_value,
                        "lr": float(optimizer.lr),
                        "train_oa": c / n if n else None,
                        "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
                    }
                    mlog.write(json.dumps(record) + "\n")
                    mlog.flush()
                    metrics.append(record)
                    if cfg.max_steps is not None and step >= cfg.max_steps:
                        stop = True
                        break
        finally:
            feed.close()
        finished_epoch = batch_idx >= len(plan)
        oa = correct / total if total else float("nan")
        epoch_oa.append(oa)
        log.info("epoch %d: %d steps so far, train OA %.4f", epoch, step, oa)
        if finished_epoch:
            epoch += 1
            skip = 0
            position = (epoch, 0)
            last_good = save(f"epoch-{epoch:03d}.tckpt", *position)
        else:
            position = (epoch, batch_idx)
            last_good = save(f"step-{step:06d}.tckpt", *position)
        if cfg.target_train_oa is not None and finished_epoch and oa >= cfg.target_train_oa:
            stop = True

    final = save("last.tckpt", *position) if last_good is not None else None
    return TrainResult(model, optimizer, metrics, final, step, len(epoch_oa), epoch_oa)


def train_fine(cfg: TrainConfig, **kwargs) -> TrainResult:
    if cfg.strategy != "fine":
        cfg = replace(cfg, strategy="fine")
    return train(cfg, **kwargs)


def train_coarse(cfg: TrainConfig, **kwargs) -> TrainResult:
    if cfg.strategy != "coarse":
        cfg = replace(cfg, strategy="coarse")
    return train(cfg, **kwargs)


def read_metrics(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


__all__ = [
    "Batch", "LossWeights", "Prefetcher", "STRATEGIES", "TrainConfig", "TrainResult",
    "TrainingData", "TrainingDiverged", "assemble_batch", "epoch_plan", "load_train_config",
    "load_trained", "loss_multiscale", "multiscale_pooled", "pooling_matrices",
    "prepare_data", "read_checkpoint_meta", "read_metrics", "scheduled_lr", "train", "train_coarse", "train_fine",
    "write_checkpoint",
]
