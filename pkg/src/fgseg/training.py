"""Training and evaluation loops for the segmentation variants.

Variants:
    baseline       encoder + decoder on the current frame only
    fg_full        force-selected key frames, force-based dynamic weights
    fg_wo_fbw      force-selected key frames, weights fixed at (0.5, 0.5)
    fg_wo_kfs_fbw  the two frames preceding the current one, fixed weights

All randomness derives from the run seed: parameter init from (seed, 0..2),
epoch sample order from (seed, 3, epoch), per-sample augmentation from
(seed, 4, epoch, crc32(video id), frame index). Two runs with identical
inputs and seed produce identical logs.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dataio import AugmentConfig, Sample, Video, augment
from .forcekeys import DynamicWeights, dynamic_weights, select_key_frames, select_preceding_frames
from .metrics import ConfusionMatrix, MetricsReport, iou_and_dice
from .neck import NeckConfig
from .network import UNetTinyConfig, forward_fg_batch, forward_baseline, init_params, predict_mask, weighted_ce_loss, _to_float01
from .optim import PlateauScheduler, RMSProp
from .tensor import Tensor

VARIANTS = ("baseline", "fg_full", "fg_wo_fbw", "fg_wo_kfs_fbw")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-8
    rho: float = 0.99
    eps: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 120
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    plateau_min_delta: float = 1e-4
    class_weights: tuple = (1.0, 30.7, 23.1)
    seed: int = 0
    augment: bool = True
    frames_per_seq: int = 0  # training frames drawn per sequence per epoch; 0 = all
    val_frames_per_seq: int = 0  # validation frames per sequence during epochs; 0 = all
    eval_batch_size: int = 8

    def __post_init__(self):
        for name in ("learning_rate", "momentum", "weight_decay", "rho", "eps",
                     "batch_size", "max_epochs", "plateau_patience",
                     "plateau_factor", "plateau_min_delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    miou: float
    dice: float
    lr: float


@dataclass
class TrainResult:
    params: dict
    log: list = field(default_factory=list)
    best_val_loss: float = math.inf
    best_val_miou: float = -math.inf
    variant: str = ""


def make_sample(video: Video, frame_index: int, variant: str) -> Sample:
    """Assemble the (current, key frames, forces) unit for one frame under
    the variant's key-frame policy."""
    mags = video.trace.fz_magnitudes()
    f_cur = float(mags[frame_index])
    if variant in ("baseline", "fg_full", "fg_wo_fbw"):
        sel = select_key_frames(video.trace)
        idx_min, idx_max = sel.idx_min, sel.idx_max
        f_min, f_max = sel.f_min, sel.f_max
        f_cur = min(max(f_cur, f_min), f_max)
    elif variant == "fg_wo_kfs_fbw":
        idx_min, idx_max = select_preceding_frames(video.trace, frame_index)
        f_min = f_max = f_cur  # force plays no role without selection/weights
    else:
        raise ValueError(f"unknown variant {variant!r}")
    mask = None if video.masks is None else video.masks[frame_index]
    return Sample(
        current=video.frames[frame_index], mask=mask,
        key_min=video.frames[idx_min], key_max=video.frames[idx_max],
        f_cur=f_cur, f_min=f_min, f_max=f_max,
        video_id=video.video_id, frame_index=frame_index,
    )


def sample_weights(sample: Sample, variant: str) -> DynamicWeights:
    if variant == "fg_full":
        return dynamic_weights(sample.f_cur, sample.f_min, sample.f_max)
    return DynamicWeights(0.5, 0.5)


def _augment_seed(seed: int, epoch: int, video_id: str, frame_index: int):
    return np.random.SeedSequence([int(seed), 4, int(epoch),
                                   zlib.crc32(video_id.encode()), int(frame_index)])


def _batch_forward(samples, variant, params, model_cfg, neck_cfg):
    masks = np.stack([s.mask for s in samples])
    if variant == "baseline":
        arr = np.stack([_to_float01(s.current) for s in samples])[:, None]
        logits = forward_baseline(Tensor(arr), params, model_cfg)
    else:
        weights = [sample_weights(s, variant) for s in samples]
        logits = forward_fg_batch(
            np.stack([s.current for s in samples]),
            np.stack([s.key_min for s in samples]),
            np.stack([s.key_max for s in samples]),
            weights, params, model_cfg, neck_cfg,
        )
    return logits, masks


def evaluate(videos, params, model_cfg: UNetTinyConfig, neck_cfg: NeckConfig | None,
             variant: str, class_weights, frames_per_seq: int = 0,
             batch_size: int = 8):
    """Forward the given videos and return (mean loss, MetricsReport). The
    pass is read-only and deterministic."""
    samples = []
    for video in videos:
        count = len(video)
        if frames_per_seq and frames_per_seq < count:
            idx = np.unique(np.linspace(0, count - 1, frames_per_seq).round().astype(int))
        else:
            idx = range(count)
        samples.extend(make_sample(video, int(i), variant) for i in idx)
    confusion = ConfusionMatrix(model_cfg.num_classes)
    total_loss = 0.0
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        with T.no_grad():
            logits, masks = _batch_forward(chunk, variant, params, model_cfg, neck_cfg)
            total_loss += weighted_ce_loss(logits, masks, class_weights).item() * len(chunk)
        confusion.add(predict_mask(logits), masks)
    report = iou_and_dice(confusion)
    report.sample_count = len(samples)
    return total_loss / max(len(samples), 1), report


def _clone_params(params: dict) -> dict:
    return {k: Tensor(p.data.copy(), requires_grad=True) for k, p in params.items()}


def train(train_videos, val_videos, model_cfg: UNetTinyConfig,
          neck_cfg: NeckConfig | None, cfg: TrainConfig, variant: str,
          augment_cfg: AugmentConfig | None = None,
          params: dict | None = None) -> TrainResult:
    """Run the full loop and return the best-validation parameters plus the
    per-epoch log. Epoch 0 logs the untrained validation state; with
    max_epochs == 0 the initialized parameters come back unchanged."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if len(cfg.class_weights) != model_cfg.num_classes:
        raise ValueError("class_weights length must equal num_classes")
    if variant == "baseline":
        neck_cfg = None
    elif neck_cfg is None:
        neck_cfg = NeckConfig(c_in=model_cfg.bottleneck_channels)
    if params is None:
        params = init_params(model_cfg, neck_cfg, cfg.seed)
    if augment_cfg is None:
        augment_cfg = AugmentConfig()

    optimizer = RMSProp(params, lr=cfg.learning_rate, rho=cfg.rho, eps=cfg.eps,
                        momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    scheduler = PlateauScheduler(cfg.learning_rate, patience=cfg.plateau_patience,
                                 factor=cfg.plateau_factor,
                                 min_delta=cfg.plateau_min_delta)

    result = TrainResult(params=_clone_params(params), variant=variant)
    val_loss, report = evaluate(val_videos, params, model_cfg, neck_cfg, variant,
                                cfg.class_weights, cfg.val_frames_per_seq,
                                cfg.eval_batch_size)
    result.best_val_loss = val_loss
    result.best_val_miou = report.miou
    result.log.append(EpochLog(0, float("nan"), val_loss, report.miou,
                               report.dice, optimizer.lr))

    for epoch in range(1, cfg.max_epochs + 1):
        order_rng = np.random.default_rng(
            np.random.SeedSequence([int(cfg.seed), 3, epoch]))
        picks: list[tuple[int, int]] = []
        for vi, video in enumerate(train_videos):
            count = len(video)
            if cfg.frames_per_seq and cfg.frames_per_seq < count:
                chosen = order_rng.choice(count, size=cfg.frames_per_seq, replace=False)
            else:
                chosen = np.arange(count)
            picks.extend((vi, int(f)) for f in chosen)
        order_rng.shuffle(picks)

        epoch_loss = 0.0
        for lo in range(0, len(picks), cfg.batch_size):
            chunk = picks[lo:lo + cfg.batch_size]
            samples = []
            for vi, fi in chunk:
                video = train_videos[vi]
                sample = make_sample(video, fi, variant)
                if cfg.augment:
                    sample = augment(sample, _augment_seed(cfg.seed, epoch,
                                                           video.video_id, fi),
                                     augment_cfg)
                samples.append(sample)
            logits, masks = _batch_forward(samples, variant, params, model_cfg, neck_cfg)
            loss = weighted_ce_loss(logits, masks, cfg.class_weights)
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(chunk)
        epoch_loss /= max(len(picks), 1)

        val_loss, report = evaluate(val_videos, params, model_cfg, neck_cfg, variant,
                                    cfg.class_weights, cfg.val_frames_per_seq,
                                    cfg.eval_batch_size)
        optimizer.lr = scheduler.step(val_loss)  # the schedule watches the loss
        result.log.append(EpochLog(epoch, epoch_loss, val_loss, report.miou,
                                   report.dice, optimizer.lr))
        result.best_val_loss = min(result.best_val_loss, val_loss)
        # checkpoint selection tracks the reported metric, not the loss
        if report.miou > result.best_val_miou:
            result.best_val_miou = report.miou
            result.params = _clone_params(params)
    return result


def log_to_csv(log, path, header_comment: str | None = None) -> None:
    """Write the per-epoch log as CSV. A single optional comment line may
    carry a timestamp; everything below it is deterministic."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("epoch,train_loss,val_loss,miou,dice,lr\n")
        for row in log:
            fh.write(f"{row.epoch},{row.train_loss:.6f},{row.val_loss:.6f},"
                     f"{row.miou:.6f},{row.dice:.6f},{row.lr:.8g}\n")
