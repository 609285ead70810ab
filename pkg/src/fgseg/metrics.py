"""Segmentation metrics and analytic compute-cost estimates.

mIoU and Dice average over the two vessel classes (artery, vein); background
is never included. A class absent from both truth and prediction is excluded
from the mean; a class that is predicted but absent from the truth scores 0.
Compute cost is counted in multiply-accumulate operations (MACs) over
convolutions, transposed convolutions and the attention products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neck import NeckConfig
from .network import UNetTinyConfig

CLASS_NAMES = ("background", "artery", "vein")
FOREGROUND = (1, 2)


class ConfusionMatrix:
    """3x3 integer counts; rows are ground truth, columns are prediction."""

    def __init__(self, num_classes: int = 3):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, prediction: np.ndarray, truth: np.ndarray) -> "ConfusionMatrix":
        prediction = np.asarray(prediction)
        truth = np.asarray(truth)
        if prediction.shape != truth.shape:
            raise ValueError(f"shape mismatch {prediction.shape} vs {truth.shape}")
        if prediction.min(initial=0) < 0 or prediction.max(initial=0) >= self.num_classes:
            raise ValueError("prediction labels out of range")
        if truth.min(initial=0) < 0 or truth.max(initial=0) >= self.num_classes:
            raise ValueError("truth labels out of range")
        idx = truth.reshape(-1).astype(np.int64) * self.num_classes \
            + prediction.reshape(-1).astype(np.int64)
        self.counts += np.bincount(idx, minlength=self.num_classes ** 2) \
            .reshape(self.num_classes, self.num_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    per_class_iou: dict = field(default_factory=dict)
    per_class_dice: dict = field(default_factory=dict)
    miou: float = float("nan")
    dice: float = float("nan")
    pixel_accuracy: float = float("nan")
    flops: int = 0
    sample_count: int = 0
    model_id: str = ""
    seed: int = 0


def iou_and_dice(confusion: ConfusionMatrix) -> MetricsReport:
    """Per-class IoU/Dice over the vessel classes plus their macro means."""
    m = confusion.counts
    if m.sum() == 0:
        raise ValueError("empty confusion matrix")
    report = MetricsReport(pixel_accuracy=float(np.trace(m)) / float(m.sum()))
    ious, dices = [], []
    for c in FOREGROUND:
        tp = int(m[c, c])
        fp = int(m[:, c].sum()) - tp
        fn = int(m[c, :].sum()) - tp
        denom = tp + fp + fn
        if denom == 0:
            continue  # class absent everywhere: excluded from the mean
        iou = tp / denom
        dice = 2 * tp / (2 * tp + fp + fn)
        report.per_class_iou[CLASS_NAMES[c]] = iou
        report.per_class_dice[CLASS_NAMES[c]] = dice
        ious.append(iou)
        dices.append(dice)
    if ious:
        report.miou = float(np.mean(ious))
        report.dice = float(np.mean(dices))
    return report


# ---------------------------------------------------------------------------
# MAC counting
# ---------------------------------------------------------------------------

def conv_macs(c_in: int, c_out: int, k: int, h_out: int, w_out: int) -> int:
    return c_in * c_out * k * k * h_out * w_out


def _backbone_macs(cfg: UNetTinyConfig, dec_in: int) -> tuple[int, int]:
    """(encoder MACs for one frame, decoder MACs including adapter/head)."""
    ch = cfg.stage_channels
    cb = cfg.bottleneck_channels
    s = cfg.image_size
    enc = 0
    prev = cfg.in_channels
    for j in range(cfg.depth):
        side = s >> j
        enc += conv_macs(prev, ch[j], 3, side, side)
        prev = ch[j]
    side_b = s >> cfg.depth
    enc += conv_macs(ch[-1], cb, 3, side_b, side_b)

    dec = conv_macs(dec_in, cb, 1, side_b, side_b)  # adapter
    up_in = cb
    for j in reversed(range(cfg.depth)):
        side_in = s >> (j + 1)
        side_out = s >> j
        dec += conv_macs(up_in, ch[j], 2, side_in, side_in)  # transposed conv
        dec += conv_macs(2 * ch[j], ch[j], 3, side_out, side_out)
        up_in = ch[j]
    dec += conv_macs(ch[0], cfg.num_classes, 1, s, s)  # head
    return enc, dec


def _neck_macs(cfg: UNetTinyConfig, neck_cfg: NeckConfig) -> int:
    side = cfg.image_size >> cfg.depth
    m = side * side
    nm = neck_cfg.n_keyframes * m
    per_frame = conv_macs(neck_cfg.c_in, neck_cfg.c_k, 1, side, side) \
        + conv_macs(neck_cfg.c_in, neck_cfg.c_v, 3, side, side)
    attention = neck_cfg.c_k * nm * m + neck_cfg.c_v * nm * m
    return 3 * per_frame + attention


def flops_estimate(cfg: UNetTinyConfig, neck_cfg: NeckConfig | None = None,
                   variant: str = "baseline") -> int:
    """Analytic multiply-accumulate count for one forward pass."""
    if variant == "baseline":
        enc, dec = _backbone_macs(cfg, dec_in=cfg.bottleneck_channels)
        return enc + dec
    if neck_cfg is None:
        neck_cfg = NeckConfig(c_in=cfg.bottleneck_channels)
    enc, dec = _backbone_macs(cfg, dec_in=neck_cfg.fused_channels)
    return 3 * enc + _neck_macs(cfg, neck_cfg) + dec
