"""Checkpoint directories: a binary parameter blob plus a JSON manifest.

Every checkpoint is a directory holding ``params.pt`` (torch state dicts)
and ``manifest.json`` (configuration, schedule, training history, format
version). Models are rebuilt from the manifest and then loaded, so a
checkpoint is self-describing.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict
from pathlib import Path

import torch

from .cascade import CascadeConfig, UnrolledNet
from .denoiser import DenoiserConfig, DenoisingModule
from .score import NoiseSchedule, ScoreModelConfig, ScoreNet, build_score_model

FORMAT_VERSION = "sgmri-ckpt-1"


def _write(directory: str | Path, states: dict, manifest: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(states, directory / "params.pt")
    manifest = {"format_version": FORMAT_VERSION, **manifest}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return directory


def _read(directory: str | Path) -> tuple[dict, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    params_path = directory / "params.pt"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing checkpoint manifest: {manifest_path}")
    if not params_path.exists():
        raise FileNotFoundError(f"missing checkpoint parameters: {params_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    states = torch.load(params_path, map_location="cpu", weights_only=True)
    return states, manifest


def save_score_checkpoint(
    directory: str | Path,
    model: ScoreNet,
    schedule: NoiseSchedule,
    history: list[float],
    extra: dict | None = None,
) -> Path:
    manifest = {
        "kind": "score",
        "config": {"widths": list(model.config.widths), "num_levels": model.config.num_levels},
        "schedule": list(schedule.sigmas),
        "epochs": len(history),
        "loss_history": history,
        **(extra or {}),
    }
    return _write(directory, {"score": model.state_dict()}, manifest)


def load_score_checkpoint(directory: str | Path) -> tuple[ScoreNet, NoiseSchedule, dict]:
    states, manifest = _read(directory)
    if manifest.get("kind") != "score":
        raise ValueError(f"{directory} is not a score-model checkpoint")
    cfg = ScoreModelConfig(
        widths=tuple(manifest["config"]["widths"]),
        num_levels=int(manifest["config"]["num_levels"]),
    )
    schedule = NoiseSchedule(sigmas=tuple(manifest["schedule"]))
    model = build_score_model(cfg, schedule)
    model.load_state_dict(states["score"])
    model.eval()
    return model, schedule, manifest


def save_model_checkpoint(
    directory: str | Path,
    denoiser: DenoisingModule | None,
    net: UnrolledNet | None,
    denoiser_config: DenoiserConfig | None,
    cascade_config: CascadeConfig | None,
    manifest_extra: dict,
) -> Path:
    states = {}
    if denoiser is not None:
        states["denoiser"] = denoiser.state_dict()
    if net is not None:
        states["net"] = net.state_dict()
    manifest = {
        "kind": "model",
        "denoiser_config": asdict(denoiser_config) if denoiser_config else None,
        "cascade_config": asdict(cascade_config) if cascade_config else None,
        **manifest_extra,
    }
    return _write(directory, states, manifest)


def load_model_checkpoint(
    directory: str | Path,
    score_model: ScoreNet | None = None,
) -> tuple[DenoisingModule | None, UnrolledNet | None, dict]:
    """Rebuild the denoiser and cascade network from a checkpoint.

    ``score_model`` seeds the score-feature extractor when the checkpoint
    used one; if omitted, the score checkpoint referenced by the manifest
    is loaded from disk.
    """
    states, manifest = _read(directory)
    if manifest.get("kind") != "model":
        raise ValueError(f"{directory} is not a model checkpoint")
    denoiser = None
    if manifest.get("denoiser_config"):
        dcfg_dict = dict(manifest["denoiser_config"])
        for key in ("cie_widths", "fusion_widths", "sie_reduce"):
            dcfg_dict[key] = tuple(dcfg_dict[key])
        dcfg = DenoiserConfig(**dcfg_dict)
        if dcfg.use_sie and score_model is None:
            ref = manifest.get("score_checkpoint")
            if not ref:
                raise ValueError("checkpoint needs a score model but none was given or referenced")
            score_model, _, _ = load_score_checkpoint(ref)
        psn_copy = copy.deepcopy(score_model) if dcfg.use_sie else None
        denoiser = DenoisingModule(dcfg, psn_copy)
        denoiser.load_state_dict(states["denoiser"])
        denoiser.eval()
    net = None
    if manifest.get("cascade_config"):
        ccfg_dict = dict(manifest["cascade_config"])
        ccfg_dict["reg_widths"] = tuple(ccfg_dict["reg_widths"])
        ccfg = CascadeConfig(**ccfg_dict)
        net = UnrolledNet(ccfg)
        net.load_state_dict(states["net"])
        net.eval()
    return denoiser, net, manifest
