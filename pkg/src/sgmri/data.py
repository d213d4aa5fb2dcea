"""On-disk dataset records.

Layout (format version 1)::

    <root>/<split>/<record-id>/
        xg.cplx     ground-truth image, H x W
        maps.cplx   sensitivity maps, C x H x W
        y.cplx      measurements, C x H x W
        mask.json   sampling mask (line flags + metadata)
        meta.json   shapes, dtype tag, seeds, format version
        pgi.cplx    optional cached Langevin sample, H x W

``.cplx`` files are flat little-endian binaries of interleaved 32-bit
real/imaginary pairs in row-major order; shapes live in ``meta.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import synth
from .masks import SamplingMask, make_mask

FORMAT_VERSION = "sgmri-dataset-1"
DTYPE_TAG = "complex64-interleaved-f32-le"
_DTYPE = np.dtype("<c8")


class RecordFormatError(ValueError):
    """A record directory exists but its contents are inconsistent."""


@dataclass
class DatasetRecord:
    record_id: str
    xg: torch.Tensor
    maps: torch.Tensor
    mask: SamplingMask
    y: torch.Tensor
    pgi: torch.Tensor | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.xg.shape
        if self.maps.shape[-2:] != (h, w) or self.y.shape != self.maps.shape:
            raise RecordFormatError(f"record {self.record_id}: array shapes are inconsistent")
        if self.mask.width != w:
            raise RecordFormatError(f"record {self.record_id}: mask width does not match image")
        if self.pgi is not None and self.pgi.shape != (h, w):
            raise RecordFormatError(f"record {self.record_id}: cached sample shape mismatch")


def _write_cplx(path: Path, arr: torch.Tensor):
    np.ascontiguousarray(arr.detach().numpy().astype(_DTYPE)).tofile(path)


def _read_cplx(path: Path, shape: tuple[int, ...]) -> torch.Tensor:
    data = np.fromfile(path, dtype=_DTYPE)
    arr = data.reshape(shape).astype(np.complex64)
    return torch.from_numpy(arr)


def _expect_size(path: Path, shape: tuple[int, ...]):
    if not path.exists():
        raise FileNotFoundError(f"missing record file: {path}")
    expected = int(np.prod(shape)) * _DTYPE.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise RecordFormatError(
            f"{path}: expected {expected} bytes for shape {tuple(shape)}, found {actual}"
        )


def write_record(record: DatasetRecord, directory: str | Path) -> Path:
    """Write one record to ``directory/<record-id>/``; lossless round trip."""
    rdir = Path(directory) / record.record_id
    rdir.mkdir(parents=True, exist_ok=True)
    shapes = {
        "xg": list(record.xg.shape),
        "maps": list(record.maps.shape),
        "y": list(record.y.shape),
    }
    _write_cplx(rdir / "xg.cplx", record.xg)
    _write_cplx(rdir / "maps.cplx", record.maps)
    _write_cplx(rdir / "y.cplx", record.y)
    if record.pgi is not None:
        _write_cplx(rdir / "pgi.cplx", record.pgi)
        shapes["pgi"] = list(record.pgi.shape)
    (rdir / "mask.json").write_text(json.dumps(record.mask.to_dict()))
    meta = {
        "format_version": FORMAT_VERSION,
        "dtype": DTYPE_TAG,
        "record_id": record.record_id,
        "shapes": shapes,
        **record.meta,
    }
    (rdir / "meta.json").write_text(json.dumps(meta, indent=1))
    return rdir


def read_record(directory: str | Path, record_id: str) -> DatasetRecord:
    """Read one record; validates every file before returning any array."""
    rdir = Path(directory) / record_id
    meta_path = rdir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing record file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise RecordFormatError(f"{meta_path}: invalid JSON ({e})") from e
    if meta.get("format_version") != FORMAT_VERSION:
        raise RecordFormatError(f"{meta_path}: unsupported format version {meta.get('format_version')!r}")
    if meta.get("dtype") != DTYPE_TAG:
        raise RecordFormatError(f"{meta_path}: unsupported dtype tag {meta.get('dtype')!r}")
    shapes = meta.get("shapes", {})
    for key in ("xg", "maps", "y"):
        if key not in shapes:
            raise RecordFormatError(f"{meta_path}: missing shape entry for {key!r}")

    xg_shape = tuple(shapes["xg"])
    files = {
        "xg": (rdir / "xg.cplx", xg_shape),
        "maps": (rdir / "maps.cplx", tuple(shapes["maps"])),
        "y": (rdir / "y.cplx", tuple(shapes["y"])),
    }
    pgi_path = rdir / "pgi.cplx"
    if pgi_path.exists():
        files["pgi"] = (pgi_path, tuple(shapes.get("pgi", xg_shape)))
    for path, shape in files.values():
        _expect_size(path, shape)
    mask_path = rdir / "mask.json"
    if not mask_path.exists():
        raise FileNotFoundError(f"missing record file: {mask_path}")
    mask = SamplingMask.from_dict(json.loads(mask_path.read_text()))

    arrays = {key: _read_cplx(path, shape) for key, (path, shape) in files.items()}
    extra = {k: v for k, v in meta.items() if k not in ("format_version", "dtype", "record_id", "shapes")}
    return DatasetRecord(
        record_id=record_id,
        xg=arrays["xg"],
        maps=arrays["maps"],
        mask=mask,
        y=arrays["y"],
        pgi=arrays.get("pgi"),
        meta=extra,
    )


def list_records(split_dir: str | Path) -> list[str]:
    split_dir = Path(split_dir)
    if not split_dir.exists():
        raise FileNotFoundError(f"missing dataset split directory: {split_dir}")
    return sorted(p.name for p in split_dir.iterdir() if (p / "meta.json").exists())


def load_split(root: str | Path, split: str) -> list[DatasetRecord]:
    split_dir = Path(root) / split
    return [read_record(split_dir, rid) for rid in list_records(split_dir)]


def make_record(
    record_id: str,
    spec: synth.PhantomSpec,
    acq: synth.AcquisitionConfig,
) -> DatasetRecord:
    """Simulate one record: phantom, maps, mask, measurements."""
    xg = synth.make_phantom(spec)
    maps = synth.make_coil_maps(acq.coils, spec.height, spec.width)
    mask = make_mask(spec.width, acq.accel, acq.center_fraction, acq.mask_kind, seed=acq.seed)
    y = synth.simulate_measurement(xg, maps, mask, acq.noise_std, seed=acq.seed + 1)
    meta = {
        "family": spec.family,
        "phantom_seed": spec.seed,
        "acq_seed": acq.seed,
        "noise_std": acq.noise_std,
        "accel": acq.accel,
    }
    return DatasetRecord(record_id=record_id, xg=xg, maps=maps, mask=mask, y=y, meta=meta)


def generate_dataset(
    root: str | Path,
    n_train: int,
    n_val: int,
    n_test: int,
    size: int = 32,
    coils: int = 4,
    accel: int = 4,
    mask_kind: str = "random",
    family: str = "A",
    seed: int = 0,
    noise_std: float = 0.0,
    center_fraction: float = 0.08,
) -> dict[str, list[str]]:
    """Generate train/val/test splits of simulated records under ``root``."""
    root = Path(root)
    counts = {"train": n_train, "val": n_val, "test": n_test}
    ids: dict[str, list[str]] = {}
    offset = 0
    for split, n in counts.items():
        split_ids = []
        split_dir = root / split
        for i in range(n):
            rid = f"r{offset + i:05d}"
            spec = synth.PhantomSpec(family=family, height=size, width=size, seed=seed + offset + i)
            acq = synth.AcquisitionConfig(
                coils=coils,
                accel=accel,
                center_fraction=center_fraction,
                mask_kind=mask_kind,
                noise_std=noise_std,
                seed=seed + offset + i,
            )
            write_record(make_record(rid, spec, acq), split_dir)
            split_ids.append(rid)
        ids[split] = split_ids
        offset += n
    manifest = {
        "format_version": FORMAT_VERSION,
        "size": size,
        "coils": coils,
        "accel": accel,
        "mask_kind": mask_kind,
        "family": family,
        "seed": seed,
        "noise_std": noise_std,
        "center_fraction": center_fraction,
        "counts": counts,
    }
    (root / "dataset.json").write_text(json.dumps(manifest, indent=1))
    return ids
