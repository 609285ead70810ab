"""The four-variant ablation protocol and its report files.

Each (variant, seed) pair trains with identical data order and shared initial
parameters (per seed), then scores the full validation split with the best
checkpoint. Reports:

    report.csv    one row per run: variant, seed, miou, dice, flops
    summary.csv   per-variant mean and standard deviation over seeds
    chart.svg     bar chart of mean validation mIoU, axis fixed to [0, 1]
    STATUS        "incomplete" while running, "complete" afterwards

All report files are byte-deterministic given the same inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import AugmentConfig
from .metrics import MetricsReport, flops_estimate
from .neck import NeckConfig
from .network import UNetTinyConfig
from .svgplot import bar_chart_svg
from .training import VARIANTS, TrainConfig, evaluate, log_to_csv, train

STATUS_INCOMPLETE = "incomplete"
STATUS_COMPLETE = "complete"


@dataclass
class AblationSpec:
    variants: tuple = VARIANTS
    seeds: tuple = (1, 2, 3)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if not self.seeds:
            raise ValueError("need at least one seed")


def mark_status(out_dir, status: str) -> None:
    Path(out_dir, "STATUS").write_text(status + "\n", encoding="ascii")


def run_ablation(spec: AblationSpec, train_videos, val_videos,
                 model_cfg: UNetTinyConfig, neck_cfg: NeckConfig,
                 out_dir=None, augment_cfg: AugmentConfig | None = None,
                 progress=None) -> list[MetricsReport]:
    """Train every (variant, seed) pair and measure it on the full validation
    split. When ``out_dir`` is given, writes per-run epoch logs, the report
    files and the STATUS marker."""
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        mark_status(out_path, STATUS_INCOMPLETE)

    reports: list[MetricsReport] = []
    for seed in spec.seeds:
        for variant in spec.variants:
            cfg = replace(spec.train, seed=int(seed))
            result = train(train_videos, val_videos, model_cfg, neck_cfg, cfg,
                           variant, augment_cfg=augment_cfg)
            nc = None if variant == "baseline" else neck_cfg
            _, report = evaluate(val_videos, result.params, model_cfg, nc,
                                 variant, cfg.class_weights,
                                 batch_size=cfg.eval_batch_size)
            report.model_id = variant
            report.seed = int(seed)
            report.flops = flops_estimate(model_cfg, neck_cfg, variant)
            reports.append(report)
            if out_path is not None:
                log_to_csv(result.log, out_path / f"log_{variant}_seed{seed}.csv")
            if progress is not None:
                progress(f"{variant} seed {seed}: miou={report.miou:.4f} "
                         f"dice={report.dice:.4f}")
    if out_path is not None:
        emit_report(reports, out_path)
        mark_status(out_path, STATUS_COMPLETE)
    return reports


def summarize(reports) -> list[tuple[str, float, float, float, float, int]]:
    """(variant, mean miou, std miou, mean dice, std dice, flops) rows in
    canonical variant order."""
    rows = []
    for variant in VARIANTS:
        got = [r for r in reports if r.model_id == variant]
        if not got:
            continue
        mious = np.array([r.miou for r in got])
        dices = np.array([r.dice for r in got])
        rows.append((variant, float(mious.mean()), float(mious.std()),
                     float(dices.mean()), float(dices.std()), got[0].flops))
    return rows


def emit_report(reports, out_dir) -> None:
    """Write report.csv, summary.csv and chart.svg under ``out_dir``."""
    if not reports:
        raise ValueError("no reports to emit")
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    ordered = sorted(reports, key=lambda r: (VARIANTS.index(r.model_id), r.seed))
    with open(out_path / "report.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("variant,seed,miou,dice,flops\n")
        for r in ordered:
            fh.write(f"{r.model_id},{r.seed},{r.miou:.6f},{r.dice:.6f},{r.flops}\n")

    rows = summarize(reports)
    with open(out_path / "summary.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("variant,mean_miou,std_miou,mean_dice,std_dice,flops\n")
        for variant, mi, si, md, sd, fl in rows:
            fh.write(f"{variant},{mi:.6f},{si:.6f},{md:.6f},{sd:.6f},{fl}\n")

    bar_chart_svg([r[0] for r in rows], [r[1] for r in rows],
                  out_path / "chart.svg", title="mean validation mIoU")


def parse_report_csv(path) -> list[MetricsReport]:
    """Inverse of the report.csv writer (used by round-trip checks)."""
    reports = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "variant,seed,miou,dice,flops":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            variant, seed, miou, dice, flops = line.strip().split(",")
            reports.append(MetricsReport(model_id=variant, seed=int(seed),
                                         miou=float(miou), dice=float(dice),
                                         flops=int(flops)))
    return reports
