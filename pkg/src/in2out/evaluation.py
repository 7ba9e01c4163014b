"""Evaluation of trained generators and the discriminator-design ablation driver."""

from __future__ import annotations

import csv
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .discriminator import TABLE_ORDER, DesignKind
from .generator import DEFAULT_WINDOW, sliding_window_infer
from .trainer import ConfigError, TrainConfig, TrainingDiverged, fit, load_generator

log = logging.getLogger(__name__)

METRIC_NAMES = ("psnr", "ssim", "fvd")


def evaluate_predictions(
    pairs: list[tuple[str, np.ndarray, np.ndarray]],
    ratio: float,
    which=METRIC_NAMES,
    region: str = "whole",
    extractor_seed: int = metrics.EXTRACTOR_SEED,
) -> metrics.MetricsReport:
    """Score (clip_id, prediction, ground truth) triples of (T, 3, H, W) videos."""
    unknown = set(which) - set(METRIC_NAMES)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    report = metrics.MetricsReport(ratio=ratio, region=region)
    for clip_id, pred, gt in sorted(pairs, key=lambda p: p[0]):
        row = {"clip_id": clip_id}
        if "psnr" in which:
            row["psnr"] = metrics.region_psnr(pred, gt, ratio, region)
        if "ssim" in which:
            row["ssim"] = metrics.ssim(pred, gt, ratio, region)
        report.per_clip.append(row)
    if "fvd" in which:
        if len(pairs) < 2:
            raise ValueError("fvd needs at least 2 clips")
        ext = metrics.RandomFeatureExtractor(extractor_seed)
        ordered = sorted(pairs, key=lambda p: p[0])
        real = metrics.video_feature_stats(ext, [p[2] for p in ordered])
        fake = metrics.video_feature_stats(ext, [p[1] for p in ordered])
        report.fvd = metrics.frechet_distance(*real, *fake)
    return report


def predict(gen, clips, ratio: float, window: int = DEFAULT_WINDOW, composite: bool = False):
    """(clip_id, prediction, ground truth) for each (clip_id, frames) pair."""
    gen.eval()
    out = []
    for clip_id, frames in clips:
        pred = sliding_window_infer(gen, torch.from_numpy(frames[None]), ratio, window, composite)
        out.append((clip_id, pred[0].numpy(), frames))
    return out


# -- ablation ------------------------------------------------------------


@dataclass(frozen=True)
class AblationPlan:
    designs: tuple[DesignKind, ...]
    config: TrainConfig
    out_dir: Path
    ratio: float = 0.25

    def __post_init__(self):
        if not self.designs:
            raise ValueError("ablation needs at least one design")
        kinds = [DesignKind(d) for d in self.designs]
        if len(set(kinds)) != len(kinds):
            raise ValueError("duplicate designs in ablation plan")
        # rows always come out in table order
        object.__setattr__(self, "designs", tuple(k for k in TABLE_ORDER if k in kinds))


def _row(kind: DesignKind, plan: AblationPlan, train_clips, eval_clips) -> dict:
    row = {"design": kind.value, "label": kind.label, "status": "ok", "error": None}
    for k in METRIC_NAMES + ("psnr_band", "final_rec_hole"):
        row[k] = None
    try:
        cfg = replace(plan.config, design=kind)
        final, records = fit(cfg, [c for _, c in train_clips], plan.out_dir / kind.value)
        row["final_rec_hole"] = records[-1]["rec_hole"]
        gen, _ = load_generator(final)
        preds = predict(gen, eval_clips, plan.ratio)
        rep = evaluate_predictions(preds, plan.ratio)
        agg = rep.aggregate()
        row.update(psnr=agg["psnr"], ssim=agg["ssim"], fvd=agg["fvd"])
        row["psnr_band"] = float(np.mean([metrics.region_psnr(p, g, plan.ratio, "band") for _, p, g in preds]))
    except TrainingDiverged as exc:
        row.update(status="diverged", error=str(exc))
    except (ConfigError, ValueError, RuntimeError) as exc:
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
        log.debug("%s", traceback.format_exc())
    return row


def run_ablation(plan: AblationPlan, train_clips, eval_clips=None, jobs: int = 1) -> dict:
    """Train and evaluate every design with the same seed and config."""
    eval_clips = eval_clips if eval_clips is not None else train_clips
    plan.out_dir.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futs = [pool.submit(_row, k, plan, train_clips, eval_clips) for k in plan.designs]
            rows = [f.result() for f in futs]
    else:
        rows = [_row(k, plan, train_clips, eval_clips) for k in plan.designs]
    cfg = plan.config.to_json()
    for k in ("design", "data", "out_dir"):
        cfg.pop(k, None)
    return {"config": cfg, "ratio": plan.ratio, "rows": rows}


def _fmt(v, spec):
    return "-" if v is None else format(v, spec)


def format_table(report: dict) -> str:
    head = f"{'Discriminator':<22} {'PSNR↑':>8} {'SSIM↑':>8} {'FVD↓':>10}  status"
    lines = [head, "-" * len(head)]
    for r in report["rows"]:
        lines.append(
            f"{r['label']:<22} {_fmt(r['psnr'], '8.2f')} {_fmt(r['ssim'], '8.4f')} {_fmt(r['fvd'], '10.4f')}  {r['status']}"
        )
    return "\n".join(lines)


def write_ablation_report(report: dict, out_dir) -> dict[str, Path]:
    from .plotting import ablation_chart

    out_dir = Path(out_dir)
    paths = {
        "json": out_dir / "ablation.json",
        "csv": out_dir / "ablation.csv",
        "txt": out_dir / "ablation.txt",
        "png": out_dir / "ablation.png",
    }
    paths["json"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["design", "label", "psnr", "ssim", "fvd", "psnr_band", "status", "error"])
        for r in report["rows"]:
            w.writerow([r["design"], r["label"], r["psnr"], r["ssim"], r["fvd"], r["psnr_band"], r["status"], r["error"]])
    paths["txt"].write_text(format_table(report) + "\n")
    ablation_chart(report["rows"], paths["png"])
    return paths
