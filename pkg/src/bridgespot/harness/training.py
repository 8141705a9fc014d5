"""Stagewise training: detector, recognizer, bridge, and the baselines."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..bridge import BridgeConfig, BridgeState
from ..datasynth import CROP_H, CROP_W, Split, jitter_box, make_splits
from ..nn import AdamW, ParameterStore
from ..spotter import (FEAT_CROP_H, FEAT_CROP_W, LossWeights, Spotter, ToyDetector,
                       ToyRecognizer, TrainingAbort, clamp_boxes, column_targets,
                       crop_region, crop_region_tensor, decode_boxes, detection_loss,
                       detection_targets, match_for_supervision, recognition_loss,
                       total_loss, valid_crop_indices)
from .checkpoint import Checkpoint, ShapeMismatchError
from .config import STAGE_KEYS, ExperimentConfig

log = logging.getLogger(__name__)

WARMUP = 100


def lr_at(step: int, total: int, base: float) -> float:
    """Linear warm-up then cosine decay to 10% of ``base``."""
    if step < WARMUP:
        return base * (step + 1) / WARMUP
    if total <= WARMUP:
        return base
    frac = (step - WARMUP) / (total - WARMUP)
    return base * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * frac)))


def _check_finite(value: float, stage: str, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingAbort(f"{stage}: non-finite loss {value} at step {step}")


def splits_for(cfg: ExperimentConfig) -> dict[str, Split]:
    return make_splits(cfg.seed, cfg.split_sizes, cfg.scene)


@dataclass
class StageResult:
    checkpoint: Checkpoint
    losses: list[float] = field(default_factory=list)
    wall_s: float = 0.0
    curve: list[tuple[int, float]] = field(default_factory=list)


# --- model construction --------------------------------------------------------------

def new_detector(seed: int) -> ToyDetector:
    return ToyDetector(rng=np.random.default_rng([seed, 1]))


def new_recognizer(seed: int) -> ToyRecognizer:
    return ToyRecognizer(rng=np.random.default_rng([seed, 2]))


def load_detector(ckpt: Checkpoint) -> ToyDetector:
    if ckpt.kind != "detector":
        raise ShapeMismatchError(f"expected a detector checkpoint, got {ckpt.kind!r}")
    det = new_detector(0)
    ckpt.apply_to(det.store)
    return det


def load_recognizer(ckpt: Checkpoint) -> ToyRecognizer:
    if ckpt.kind != "recognizer":
        raise ShapeMismatchError(f"expected a recognizer checkpoint, got {ckpt.kind!r}")
    rec = new_recognizer(0)
    ckpt.apply_to(rec.store)
    return rec


# --- stage 1: detector ---------------------------------------------------------------------

def train_detector(cfg: ExperimentConfig, splits=None, init: Checkpoint | None = None,
                   split_name: str = "det_train", iters: int | None = None,
                   lr: float | None = None) -> StageResult:
    """Objectness BCE + smooth-L1 box regression with AdamW."""
    splits = splits or splits_for(cfg)
    data = splits[split_name]
    iters = cfg.det_iters if iters is None else iters
    lr = cfg.det_lr if lr is None else lr
    det = load_detector(init) if init is not None else new_detector(cfg.seed)
    opt = AdamW(det.store, lr=lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 101, len(split_name)])
    losses = []
    start = time.perf_counter()
    for step in range(iters):
        idx = rng.integers(0, len(data), cfg.batch_size)
        samples = [data[int(i)] for i in idx]
        images = Tensor(np.stack([s.image for s in samples]))
        _, raw = det.forward(images)
        loss = detection_loss(raw, detection_targets([s.boxes for s in samples], det.cfg))
        value = loss.item()
        _check_finite(value, "detector", step)
        loss.backward()
        opt.lr = lr_at(step, iters, lr)
        opt.step()
        losses.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("detector step %d loss %.4f", step, value)
    fp = cfg.fingerprint(STAGE_KEYS["detector"])
    ckpt = Checkpoint.from_store("detector", det.store, fp)
    return StageResult(ckpt, losses, time.perf_counter() - start)


# --- stage 2: recognizer -------------------------------------------------------------------

def _word_batch(data, idx):
    crops = np.stack([data[int(i)].image for i in idx])
    labels = np.stack([data[int(i)].labels for i in idx])
    return crops, labels


def augment_word_crops(crops: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Label-preserving jitter for recognizer training crops.

    Vertical shift of up to two rows, ink gain in [0.7, 1.3] and a fresh layer
    of pixel noise. Horizontal shifts are left out because they would move
    glyphs relative to the per-token labels.
    """
    out = np.zeros_like(crops)
    for k, img in enumerate(crops):
        dy = int(rng.integers(-2, 3))
        src = img[..., max(0, -dy):img.shape[-2] - max(0, dy), :]
        out[k, ..., max(0, dy):max(0, dy) + src.shape[-2], :] = src
    out *= rng.uniform(0.7, 1.3, size=(len(crops),) + (1,) * (crops.ndim - 1))
    out += rng.normal(0.0, 0.03, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def scene_word_crops(samples, rng: np.random.Generator):
    """Jittered ground-truth crops from full scenes (used for fine-tuning)."""
    crops, labels = [], []
    for s in samples:
        h, w = s.image.shape[-2:]
        for a in s.annotations:
            box = clamp_boxes(np.array(jitter_box(a.box, rng)), h, w)[0]
            crops.append(crop_region(s.image, box, CROP_H, CROP_W))
            labels.append(column_targets(a.char_spans, a.text, box))
    return np.stack(crops), np.stack(labels)


def train_recognizer(cfg: ExperimentConfig, splits=None, init: Checkpoint | None = None,
                     split_name: str = "rec_train", iters: int | None = None,
                     lr: float | None = None) -> StageResult:
    """Per-token cross-entropy on ground-truth word crops."""
    splits = splits or splits_for(cfg)
    data = splits[split_name]
    iters = cfg.rec_iters if iters is None else iters
    lr = cfg.rec_lr if lr is None else lr
    rec = load_recognizer(init) if init is not None else new_recognizer(cfg.seed)
    opt = AdamW(rec.store, lr=lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 102, len(split_name)])
    scenes = split_name != "rec_train"
    losses = []
    start = time.perf_counter()
    for step in range(iters):
        if scenes:
            idx = rng.integers(0, len(data), max(1, cfg.rec_batch_size // 2))
            crops, labels = scene_word_crops([data[int(i)] for i in idx], rng)
        else:
            idx = rng.integers(0, len(data), cfg.rec_batch_size)
            crops, labels = _word_batch(data, idx)
            crops = augment_word_crops(crops, rng)
        logits = rec.head(rec.backbone(Tensor(crops)))
        loss = recognition_loss(logits, labels)
        value = loss.item()
        _check_finite(value, "recognizer", step)
        loss.backward()
        opt.lr = lr_at(step, iters, lr)
        opt.step()
        losses.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("recognizer step %d loss %.4f", step, value)
    fp = cfg.fingerprint(STAGE_KEYS["recognizer"])
    ckpt = Checkpoint.from_store("recognizer", rec.store, fp)
    return StageResult(ckpt, losses, time.perf_counter() - start)


# --- stage 3: bridge -----------------------------------------------------------------------

@dataclass
class BridgedSystem:
    detector: ToyDetector
    recognizer: ToyRecognizer
    bridge: BridgeState | None
    store: ParameterStore
    layout: dict

    def spotter(self) -> Spotter:
        return Spotter(self.detector, self.recognizer, self.bridge)


def assemble_system(det: ToyDetector, rec: ToyRecognizer, cfg: ExperimentConfig,
                    freeze_cores: bool = True) -> BridgedSystem:
    """Attach bridge/adapters per ``cfg`` and set the freeze pattern.

    With ``freeze_cores`` the detector and recognizer are locked except for the
    adapters and the normalization layers at adapter sites.
    """
    rng = np.random.default_rng([cfg.seed, 3])
    if freeze_cores:
        det.store.freeze("*")
        rec.store.freeze("*")
    bridge = None
    if cfg.use_bridge:
        bridge = BridgeState(BridgeConfig(det_channels=det.cfg.channels, rec_dim=rec.cfg.dim,
                                          depth=cfg.encoder_depth, init_mode=cfg.bridge_init),
                             rng)
    if cfg.det_adapter:
        det.insert_adapters(rng)
        if freeze_cores:
            det.store.unfreeze(det.adapter_norm_pattern())
    if cfg.rec_adapter:
        rec.insert_adapters(rng)
        if freeze_cores:
            for name, e in rec.store.entries.items():
                if e.is_normalization:
                    rec.store.unfreeze(name)
    store = ParameterStore()
    store.merge(det.store)
    store.merge(rec.store)
    if bridge is not None:
        store.merge(bridge.store)
    layout = {"use_bridge": cfg.use_bridge, "encoder_depth": cfg.encoder_depth,
              "bridge_init": cfg.bridge_init, "det_adapter": cfg.det_adapter,
              "rec_adapter": cfg.rec_adapter}
    return BridgedSystem(det, rec, bridge, store, layout)


def system_checkpoint(system: BridgedSystem, cfg: ExperimentConfig, kind: str = "bridged"
                      ) -> Checkpoint:
    return Checkpoint.from_store(kind, system.store, cfg.fingerprint(),
                                 {"layout": system.layout})


def load_system(ckpt: Checkpoint) -> BridgedSystem:
    layout = ckpt.extra.get("layout")
    if layout is None:
        raise ShapeMismatchError(f"{ckpt.kind} checkpoint carries no system layout")
    cfg = ExperimentConfig(encoder_depth=layout["encoder_depth"],
                           bridge_init=layout["bridge_init"], use_bridge=layout["use_bridge"],
                           det_adapter=layout["det_adapter"], rec_adapter=layout["rec_adapter"])
    system = assemble_system(new_detector(0), new_recognizer(0), cfg, freeze_cores=False)
    ckpt.apply_to(system.store)
    for name, frozen in ckpt.frozen.items():
        system.store._set_frozen([name], frozen)
    return system


def _bridge_step_inputs(system: BridgedSystem, samples, f_det: Tensor, raw: Tensor):
    """Crops, feature crops and per-token targets for matched predictions."""
    det = system.detector
    h, w = det.cfg.height, det.cfg.width
    preds = decode_boxes(raw.data, det.cfg)
    crops, feats, labels = [], [], []
    for b, (s, p) in enumerate(zip(samples, preds)):
        sel = valid_crop_indices(p.boxes, h, w)
        boxes = clamp_boxes(p.boxes, h, w)
        kept = set(sel.kept)
        for m in match_for_supervision(p, s.boxes, s.texts):
            if m.pred not in kept:
                continue
            box = boxes[m.pred]
            crops.append(crop_region(s.image, box, CROP_H, CROP_W))
            if system.bridge is not None:
                feats.append(crop_region_tensor(f_det[b], box, FEAT_CROP_H, FEAT_CROP_W,
                                                det.cfg.stride))
            labels.append(column_targets(s.annotations[m.gt].char_spans, m.target, box))
    return crops, feats, labels


def _stem_tokens(det: ToyDetector, data, idx, cache: dict[int, np.ndarray] | None) -> Tensor:
    """Detector stem output for ``data[idx]``.

    A frozen stem is a fixed function of the image, so its tokens are
    memoized per sample index in ``cache`` (pass None to recompute).
    """
    if cache is None:
        return det.stem(Tensor(np.stack([data[int(i)].image for i in idx])))
    todo = sorted({int(i) for i in idx} - cache.keys())
    if todo:
        with ad.no_grad():
            fresh = det.stem(Tensor(np.stack([data[i].image for i in todo]))).data
        cache.update(zip(todo, fresh))
    return Tensor(np.stack([cache[int(i)] for i in idx]))


def train_bridge(det_ckpt: Checkpoint, rec_ckpt: Checkpoint, cfg: ExperimentConfig,
                 splits=None, iters: int | None = None,
                 evaluator: Callable[[BridgedSystem], float] | None = None) -> tuple[
                     BridgedSystem, StageResult]:
    """Optimize only bridge, adapters and adapter-site normalization on L_sum.

    The detection term is included only when the detector carries adapters
    (otherwise nothing upstream of the crops can learn from it). ``evaluator``,
    when given, is called at evenly spaced steps to record an E2E-F curve.
    """
    splits = splits or splits_for(cfg)
    data = splits["bridge_train"]
    iters = cfg.bridge_iters if iters is None else iters
    system = assemble_system(load_detector(det_ckpt), load_recognizer(rec_ckpt), cfg)
    det, rec = system.detector, system.recognizer
    weights = LossWeights(cfg.lambda_det, cfg.lambda_rec)
    opt = AdamW(system.store, lr=cfg.bridge_lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 103])
    checkpoints = sorted({round(k * iters / cfg.curve_points) for k in range(cfg.curve_points + 1)})
    curve: list[tuple[int, float]] = []
    losses: list[float] = []
    trainable = system.store.count(trainable_only=True)
    eval_s = 0.0
    stems: dict[int, np.ndarray] | None = {} if det.stem_frozen() else None
    start = time.perf_counter()
    for step in range(iters + 1):
        if evaluator is not None and step in checkpoints:
            t0 = time.perf_counter()
            curve.append((step, evaluator(system)))
            eval_s += time.perf_counter() - t0  # measurement, not training time
            log.info("bridge step %d curve F %.4f", step, curve[-1][1])
        if step == iters or trainable == 0:
            if trainable == 0:
                log.info("bridge stage: no trainable parameters, skipping optimization")
                if evaluator is not None:
                    curve = [(k, curve[0][1]) for k in checkpoints]
            break
        idx = rng.integers(0, len(data), cfg.batch_size)
        samples = [data[int(i)] for i in idx]
        tokens = _stem_tokens(det, data, idx, stems)
        if cfg.det_adapter:
            f_det, raw = det.forward_from_stem(tokens)
        else:
            with ad.no_grad():
                f_det, raw = det.forward_from_stem(tokens)
        crops, feats, labels = _bridge_step_inputs(system, samples, f_det, raw)
        det_loss = rec_loss = None
        if cfg.det_adapter:
            det_loss = detection_loss(raw, detection_targets([s.boxes for s in samples], det.cfg))
        if crops:
            f_r = rec.backbone(Tensor(np.stack(crops)))
            if system.bridge is not None:
                f_r = system.bridge(f_r, ad.stack(feats))
            rec_loss = recognition_loss(rec.head(f_r), np.stack(labels))
        loss = total_loss(det_loss, rec_loss, weights, step)
        if not isinstance(loss, Tensor) or not loss.requires_grad:
            losses.append(float(loss.item() if isinstance(loss, Tensor) else loss))
            continue
        value = loss.item()
        _check_finite(value, "bridge", step)
        loss.backward()
        opt.lr = lr_at(step, iters, cfg.bridge_lr)
        opt.step()
        losses.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("bridge step %d loss %.4f", step, value)
    ckpt = system_checkpoint(system, cfg)
    return system, StageResult(ckpt, losses, time.perf_counter() - start - eval_s, curve)


# --- end-to-end baseline ---------------------------------------------------------------------

def train_end_to_end(cfg: ExperimentConfig, splits=None, iters: int | None = None
                     ) -> tuple[BridgedSystem, StageResult]:
    """Detector, recognizer and feature path trained jointly from scratch.

    Uses only the fully annotated split; recognition is supervised on jittered
    ground-truth boxes because early detections are meaningless.
    """
    splits = splits or splits_for(cfg)
    data = splits["bridge_train"]
    iters = cfg.e2e_iters if iters is None else iters
    e2e_cfg = cfg.replace(use_bridge=True, det_adapter=False, rec_adapter=False,
                          bridge_init="standard")
    system = assemble_system(new_detector(cfg.seed + 1), new_recognizer(cfg.seed + 1), e2e_cfg,
                             freeze_cores=False)
    det, rec = system.detector, system.recognizer
    weights = LossWeights(cfg.lambda_det, cfg.lambda_rec)
    opt = AdamW(system.store, lr=cfg.det_lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 104])
    losses = []
    start = time.perf_counter()
    for step in range(iters):
        idx = rng.integers(0, len(data), cfg.batch_size)
        samples = [data[int(i)] for i in idx]
        f_det, raw = det.forward(Tensor(np.stack([s.image for s in samples])))
        det_loss = detection_loss(raw, detection_targets([s.boxes for s in samples], det.cfg))
        crops, feats, labels = [], [], []
        for b, s in enumerate(samples):
            h, w = s.image.shape[-2:]
            for a in s.annotations:
                box = clamp_boxes(np.array(jitter_box(a.box, rng)), h, w)[0]
                crops.append(crop_region(s.image, box, CROP_H, CROP_W))
                feats.append(crop_region_tensor(f_det[b], box, FEAT_CROP_H, FEAT_CROP_W,
                                                det.cfg.stride))
                labels.append(column_targets(a.char_spans, a.text, box))
        f_r = system.bridge(rec.backbone(Tensor(np.stack(crops))), ad.stack(feats))
        rec_loss = recognition_loss(rec.head(f_r), np.stack(labels))
        loss = total_loss(det_loss, rec_loss, weights, step)
        value = loss.item()
        _check_finite(value, "end_to_end", step)
        loss.backward()
        opt.lr = lr_at(step, iters, cfg.det_lr)
        opt.step()
        losses.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("end-to-end step %d loss %.4f", step, value)
    ckpt = system_checkpoint(system, e2e_cfg, kind="end_to_end")
    return system, StageResult(ckpt, losses, time.perf_counter() - start)
