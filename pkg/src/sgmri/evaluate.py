"""Per-record and aggregate quality tables for reconstruction stages.

Evaluation is read-only with respect to datasets and checkpoints. Results
go to ``metrics.csv`` (one row per record and stage, schema ``metrics-v1``
with columns record_id, stage, psnr_db, ssim, accel) plus ``summary.json``
(aggregates, warnings, schema tag), and optionally one PNG panel per
record.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
import torch

from . import baselines, metrics
from .data import DatasetRecord, load_split
from .training import (
    STAGE_DENOISED,
    STAGE_GUIDANCE_FINAL,
    STAGE_MAIN_FINAL,
    STAGE_SAMPLE,
    STAGE_TV,
    STAGE_ZERO_FILLED,
    ModelBundle,
    run_pipeline,
)

logger = logging.getLogger(__name__)

CSV_SCHEMA = "metrics-v1"
CSV_COLUMNS = ("record_id", "stage", "psnr_db", "ssim", "accel")
ALL_STAGES = (
    STAGE_ZERO_FILLED,
    STAGE_SAMPLE,
    STAGE_DENOISED,
    STAGE_GUIDANCE_FINAL,
    STAGE_MAIN_FINAL,
    STAGE_TV,
)


def stage_images(
    record: DatasetRecord,
    bundle: ModelBundle | None,
    stages: tuple[str, ...],
    tv_params: dict | None = None,
) -> tuple[dict[str, torch.Tensor], list[str]]:
    """Reconstruct the requested stages for one record.

    Returns the computed images and a list of warnings for stages that
    were requested but unavailable.
    """
    out: dict[str, torch.Tensor] = {}
    warnings: list[str] = []
    pipeline = None
    if bundle is not None:
        with torch.no_grad():
            bundle.eval()
            try:
                pipeline = run_pipeline(bundle, record)
            except ValueError as e:
                warnings.append(f"{record.record_id}: {e}")
    for stage in stages:
        if stage == STAGE_ZERO_FILLED:
            out[stage] = baselines.zero_filled(record.y, record.maps, record.mask)
        elif stage == STAGE_SAMPLE:
            if record.pgi is None:
                warnings.append(f"{record.record_id}: no cached sample for stage {stage}")
            else:
                out[stage] = record.pgi
        elif stage == STAGE_TV:
            params = tv_params or {}
            out[stage], _ = baselines.tv_reconstruct(record.y, record.maps, record.mask, **params)
        elif stage in (STAGE_DENOISED, STAGE_GUIDANCE_FINAL, STAGE_MAIN_FINAL):
            if pipeline is not None and stage in pipeline:
                out[stage] = pipeline[stage]
            else:
                warnings.append(f"{record.record_id}: stage {stage} unavailable")
        else:
            raise ValueError(f"unknown stage {stage!r}; expected one of {ALL_STAGES}")
    return out, warnings


def evaluate_records(
    records: list[DatasetRecord],
    bundle: ModelBundle | None,
    stages: tuple[str, ...],
    tv_params: dict | None = None,
) -> tuple[list[dict], list[str]]:
    rows: list[dict] = []
    warnings: list[str] = []
    for record in records:
        images, warns = stage_images(record, bundle, stages, tv_params)
        warnings.extend(warns)
        for stage, img in images.items():
            rows.append(
                {
                    "record_id": record.record_id,
                    "stage": stage,
                    "psnr_db": metrics.psnr(img, record.xg),
                    "ssim": metrics.ssim(img, record.xg),
                    "accel": record.mask.accel,
                }
            )
    return rows, warnings


def aggregate(rows: list[dict]) -> dict[str, dict[str, float]]:
    """Mean and std of PSNR/SSIM per stage."""
    by_stage: dict[str, dict[str, list[float]]] = {}
    for row in rows:
        entry = by_stage.setdefault(row["stage"], {"psnr_db": [], "ssim": []})
        entry["psnr_db"].append(row["psnr_db"])
        entry["ssim"].append(row["ssim"])
    out = {}
    for stage, vals in by_stage.items():
        out[stage] = {
            "psnr_mean": float(np.mean(vals["psnr_db"])),
            "psnr_std": float(np.std(vals["psnr_db"])),
            "ssim_mean": float(np.mean(vals["ssim"])),
            "ssim_std": float(np.std(vals["ssim"])),
            "count": len(vals["psnr_db"]),
        }
    return out


def _save_panels(records, bundle, stages, tv_params, out_dir: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for record in records:
        images, _ = stage_images(record, bundle, stages, tv_params)
        n = 1 + 2 * len(images)
        fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.5))
        gt = record.xg.abs().numpy()
        axes[0].imshow(gt, cmap="gray")
        axes[0].set_title("ground truth", fontsize=8)
        for i, (stage, img) in enumerate(images.items(), start=1):
            axes[i].imshow(img.abs().detach().numpy(), cmap="gray")
            axes[i].set_title(stage, fontsize=8)
        for i, (stage, img) in enumerate(images.items(), start=1 + len(images)):
            axes[i].imshow(np.abs(img.abs().detach().numpy() - gt), cmap="viridis")
            axes[i].set_title(f"error {stage}", fontsize=8)
        for ax in axes:
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(out_dir / f"{record.record_id}.png", dpi=110)
        plt.close(fig)


def evaluate(
    data_root: str | Path,
    split: str,
    bundle: ModelBundle | None,
    stages: tuple[str, ...],
    out_dir: str | Path,
    figures: bool = False,
    tv_params: dict | None = None,
) -> dict:
    """Evaluate a dataset split and write metrics.csv / summary.json."""
    records = load_split(data_root, split)
    rows, warnings = evaluate_records(records, bundle, stages, tv_params)
    for w in warnings:
        logger.warning("%s", w)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "metrics.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(CSV_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    summary = {
        "csv_schema": CSV_SCHEMA,
        "split": split,
        "stages": list(stages),
        "aggregate": aggregate(rows),
        "warnings": warnings,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    if figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        _save_panels(records, bundle, stages, tv_params, fig_dir)
    return summary
