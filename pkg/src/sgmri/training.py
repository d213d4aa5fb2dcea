"""End-to-end training of the denoiser and unrolled cascades.

The denoiser, the cascade network, and (when enabled) the trainable copy
of the score network inside the score-feature extractor are optimized
jointly with Adam against the deeply supervised loss. Cached guidance
samples are read from the records; training never re-runs the sampler.

Ablation names select reduced pipelines:

  SG             sampling only (nothing to train)
  MN             plain single-branch cascades from the zero-filled image
  SG-MN          plain single-branch cascades seeded with the raw sample
  SG-MN-DM       denoiser only, its output is the final reconstruction
  SG-MN-DM-US    full pipeline without dense regularizer inputs
  SG-MN-DM-DG    full pipeline without guidance updates across cascades
  SG-MN-US-DG    full pipeline without the denoiser (raw sample guidance)
  full           everything enabled (alias SG-MN-DM-US-DG)
"""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from . import baselines, losses, metrics
from .cascade import CascadeConfig, UnrolledNet
from .checkpoint import save_model_checkpoint
from .data import DatasetRecord
from .denoiser import DenoiserConfig, DenoisingModule
from .losses import LOSS_MODES
from .score import ScoreNet

logger = logging.getLogger(__name__)

ABLATIONS = (
    "SG",
    "MN",
    "SG-MN",
    "SG-MN-DM",
    "SG-MN-DM-US",
    "SG-MN-DM-DG",
    "SG-MN-US-DG",
    "SG-MN-DM-US-DG",
    "full",
)

STAGE_SAMPLE = "x_T"
STAGE_DENOISED = "x_T^0"
STAGE_GUIDANCE_FINAL = "x_T^K"
STAGE_MAIN_FINAL = "x_z^K"
STAGE_ZERO_FILLED = "zero-filled"
STAGE_TV = "TV"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 1
    loss_mode: str = "mse"
    ablation: str = "full"
    train_slices: int | None = None
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0:
            raise ValueError("epochs and learning rate must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss mode must be one of {LOSS_MODES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.train_slices is not None and self.train_slices < 1:
            raise ValueError("train slice cap must be positive")


@dataclass
class ModelBundle:
    """Everything needed to run the reconstruction pipeline on a record."""

    ablation: str
    denoiser: DenoisingModule | None
    net: UnrolledNet | None
    denoiser_config: DenoiserConfig | None
    cascade_config: CascadeConfig | None

    def parameters(self):
        for module in (self.denoiser, self.net):
            if module is not None:
                yield from module.parameters()

    def train(self):
        for module in (self.denoiser, self.net):
            if module is not None:
                module.train()

    def eval(self):
        for module in (self.denoiser, self.net):
            if module is not None:
                module.eval()


def _uses_denoiser(ablation: str) -> bool:
    return ablation in ("SG-MN-DM", "SG-MN-DM-US", "SG-MN-DM-DG", "SG-MN-DM-US-DG", "full")


def _uses_cascades(ablation: str) -> bool:
    return ablation not in ("SG", "SG-MN-DM")


def _uses_guidance_branch(ablation: str) -> bool:
    return ablation in ("SG-MN-DM-US", "SG-MN-DM-DG", "SG-MN-US-DG", "SG-MN-DM-US-DG", "full")


def needs_sample(ablation: str) -> bool:
    return ablation != "MN"


def resolve_cascade_config(config: CascadeConfig, ablation: str) -> CascadeConfig:
    """Apply the ablation's toggles on top of a base cascade config."""
    if not _uses_cascades(ablation):
        raise ValueError(f"ablation {ablation!r} has no cascade network")
    if ablation in ("MN", "SG-MN"):
        return replace(config, use_guidance=False, use_attention=False, use_dense=False, use_guidance_updates=False)
    if ablation == "SG-MN-DM-US":
        return replace(config, use_guidance=True, use_dense=False)
    if ablation == "SG-MN-DM-DG":
        return replace(config, use_guidance=True, use_guidance_updates=False)
    return replace(config, use_guidance=True)


def build_bundle(
    ablation: str,
    denoiser_config: DenoiserConfig,
    cascade_config: CascadeConfig,
    score_model: ScoreNet | None,
    seed: int = 0,
) -> ModelBundle:
    """Construct the modules an ablation trains, with seeded init."""
    if ablation == "SG":
        raise ValueError("the sampling-only workflow has nothing to train")
    torch.manual_seed(seed)
    denoiser = None
    dcfg = None
    if _uses_denoiser(ablation):
        dcfg = denoiser_config
        psn_copy = copy.deepcopy(score_model) if dcfg.use_sie else None
        denoiser = DenoisingModule(dcfg, psn_copy)
    net = None
    ccfg = None
    if _uses_cascades(ablation):
        ccfg = resolve_cascade_config(cascade_config, ablation)
        net = UnrolledNet(ccfg)
    return ModelBundle(
        ablation=ablation,
        denoiser=denoiser,
        net=net,
        denoiser_config=dcfg,
        cascade_config=ccfg,
    )


def _require_sample(record: DatasetRecord) -> torch.Tensor:
    if record.pgi is None:
        raise ValueError(
            f"record {record.record_id!r} has no cached guidance sample (pgi.cplx); "
            "run the sampler over the dataset first"
        )
    return record.pgi


def run_pipeline(bundle: ModelBundle, record: DatasetRecord) -> dict:
    """Compute every pipeline stage available for this bundle on a record."""
    y, maps, mask = record.y, record.maps, record.mask
    stages: dict[str, torch.Tensor] = {}
    zf = baselines.zero_filled(y, maps, mask)
    stages[STAGE_ZERO_FILLED] = zf

    sample = record.pgi
    if needs_sample(bundle.ablation):
        sample = _require_sample(record)
        stages[STAGE_SAMPLE] = sample

    denoised = None
    if bundle.denoiser is not None:
        denoised = bundle.denoiser(sample, y, maps, mask)
        stages[STAGE_DENOISED] = denoised

    intermediates = None
    if bundle.net is not None:
        if bundle.ablation in ("MN", "SG-MN"):
            guidance0 = None
            main0 = zf if bundle.ablation == "MN" else sample
        else:
            guidance0 = denoised if denoised is not None else sample
            main0 = zf
        intermediates = bundle.net(guidance0, main0, y, maps, mask)
        final_g, final_m = intermediates[-1]
        if final_g is not None:
            stages[STAGE_GUIDANCE_FINAL] = final_g
        stages[STAGE_MAIN_FINAL] = final_m
    elif denoised is not None:
        stages[STAGE_MAIN_FINAL] = denoised  # the denoiser output is the reconstruction

    stages["_intermediates"] = intermediates
    stages["_denoised"] = denoised
    return stages


def pipeline_loss(
    bundle: ModelBundle,
    record: DatasetRecord,
    mode: str,
    stages: dict | None = None,
) -> torch.Tensor:
    if stages is None:
        stages = run_pipeline(bundle, record)
    target = record.xg
    if bundle.net is None:
        return losses.image_loss(stages["_denoised"], target, mode)
    return losses.total_loss(stages["_denoised"], stages["_intermediates"], target, mode)


def evaluate_bundle(
    bundle: ModelBundle,
    records: list[DatasetRecord],
    mode: str = "mse",
) -> dict:
    """Mean loss / PSNR / SSIM of the final reconstruction over records."""
    bundle.eval()
    total_loss_val = 0.0
    psnrs = []
    ssims = []
    with torch.no_grad():
        for record in records:
            stages = run_pipeline(bundle, record)
            total_loss_val += float(pipeline_loss(bundle, record, mode, stages))
            final = stages[STAGE_MAIN_FINAL]
            psnrs.append(metrics.psnr(final, record.xg))
            ssims.append(metrics.ssim(final, record.xg))
    n = max(len(records), 1)
    return {
        "loss": total_loss_val / n,
        "psnr": sum(psnrs) / n,
        "ssim": sum(ssims) / n,
    }


def train_end_to_end(
    train_records: list[DatasetRecord],
    val_records: list[DatasetRecord],
    score_model: ScoreNet | None,
    denoiser_config: DenoiserConfig,
    cascade_config: CascadeConfig,
    config: TrainConfig,
    out_dir: str | Path,
    score_checkpoint: str | None = None,
) -> tuple[Path, list[dict]]:
    """Jointly optimize the pipeline; saves the best-validation checkpoint.

    Returns the checkpoint directory and the per-epoch history (also
    written as ``training_log.csv`` with columns epoch, train_loss,
    val_loss, val_psnr, val_ssim).
    """
    if len(train_records) == 0:
        raise ValueError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    order_gen = torch.Generator().manual_seed(config.seed)
    if config.train_slices is not None and config.train_slices < len(train_records):
        perm = torch.randperm(len(train_records), generator=order_gen)
        train_records = [train_records[int(i)] for i in perm[: config.train_slices]]

    for record in train_records + val_records:
        if needs_sample(config.ablation):
            _require_sample(record)

    bundle = build_bundle(config.ablation, denoiser_config, cascade_config, score_model, seed=config.seed)
    opt = torch.optim.Adam(bundle.parameters(), lr=config.lr)

    history: list[dict] = []
    best_psnr = float("-inf")
    ckpt_dir = out_dir / "checkpoint"
    for epoch in range(config.epochs):
        bundle.train()
        perm = torch.randperm(len(train_records), generator=order_gen)
        epoch_loss = 0.0
        for idx in perm:
            record = train_records[int(idx)]
            loss = pipeline_loss(bundle, record, config.loss_mode)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch} on record {record.record_id!r}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss)
        train_loss = epoch_loss / len(train_records)

        val_stats = (
            evaluate_bundle(bundle, val_records, config.loss_mode)
            if val_records
            else {"loss": float("nan"), "psnr": float("nan"), "ssim": float("nan")}
        )
        row = {
            "epoch": epoch + 1,
            "train_loss": train_loss,
            "val_loss": val_stats["loss"],
            "val_psnr": val_stats["psnr"],
            "val_ssim": val_stats["ssim"],
        }
        history.append(row)
        if config.log_every and (epoch + 1) % config.log_every == 0:
            logger.info(
                "epoch %d/%d: train loss %.5f, val psnr %.2f dB",
                epoch + 1, config.epochs, train_loss, val_stats["psnr"],
            )
        if not val_records or val_stats["psnr"] >= best_psnr:
            best_psnr = val_stats["psnr"] if val_records else 0.0
            save_model_checkpoint(
                ckpt_dir,
                bundle.denoiser,
                bundle.net,
                bundle.denoiser_config,
                bundle.cascade_config,
                {
                    "ablation": config.ablation,
                    "loss_mode": config.loss_mode,
                    "epoch": epoch + 1,
                    "seed": config.seed,
                    "history": history,
                    "score_checkpoint": score_checkpoint,
                },
            )

    with (out_dir / "training_log.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "val_psnr", "val_ssim"])
        writer.writeheader()
        writer.writerows(history)
    return ckpt_dir, history
