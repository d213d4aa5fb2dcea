"""Cartesian line sampling masks.

A mask selects phase-encode lines (columns of the centered k-space grid).
The center block around the zero-frequency column is always fully sampled;
the remaining budget is spent on random or equispaced lines outside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

MASK_KINDS = ("random", "equispaced", "full")


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Binary Cartesian line mask over a width-W k-space grid.

    ``lines[w]`` is True when column w is acquired. The mask applies to the
    centered k-space convention, so the fully sampled center block sits
    around column ``W // 2``.
    """

    lines: torch.Tensor
    accel: int
    center_fraction: float
    kind: str
    _grids: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.lines.dtype != torch.bool or self.lines.ndim != 1:
            raise ValueError("mask lines must be a 1D boolean tensor")
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.accel < 1:
            raise ValueError("acceleration must be a positive integer")
        if not 0.0 < self.center_fraction <= 1.0:
            raise ValueError("center_fraction must be in (0, 1]")

    @property
    def width(self) -> int:
        return self.lines.shape[0]

    @property
    def num_sampled(self) -> int:
        return int(self.lines.sum())

    @property
    def center_width(self) -> int:
        return num_center_lines(self.width, self.center_fraction)

    def grid(self, height: int) -> torch.Tensor:
        """Expand line flags to an (H, W) boolean grid (rows replicated)."""
        key = height
        if key not in self._grids:
            self._grids[key] = self.lines.unsqueeze(0).expand(height, -1).clone()
        return self._grids[key]

    def to_dict(self) -> dict:
        return {
            "lines": [int(v) for v in self.lines.tolist()],
            "accel": self.accel,
            "center_fraction": self.center_fraction,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingMask":
        lines = torch.tensor([bool(v) for v in d["lines"]], dtype=torch.bool)
        return cls(
            lines=lines,
            accel=int(d["accel"]),
            center_fraction=float(d["center_fraction"]),
            kind=str(d["kind"]),
        )


def num_center_lines(width: int, center_fraction: float) -> int:
    return int(np.ceil(center_fraction * width))


def center_block(width: int, center_fraction: float) -> tuple[int, int]:
    """Start (inclusive) and stop (exclusive) of the fully sampled center."""
    n = num_center_lines(width, center_fraction)
    start = (width - n + 1) // 2
    return start, start + n


def equispaced_positions(candidates: int, count: int) -> list[int]:
    """Indices into a sorted candidate list at evenly spaced positions."""
    return [int(np.floor(i * candidates / count)) for i in range(count)]


def make_mask(
    width: int,
    accel: int,
    center_fraction: float = 0.08,
    kind: str = "random",
    seed: int = 0,
) -> SamplingMask:
    """Build a Cartesian sampling mask.

    The total number of acquired lines is ``round(width / accel)``. The
    center block of ``ceil(center_fraction * width)`` contiguous lines is
    always included; the remaining lines are drawn uniformly without
    replacement (``random``) or placed at evenly spaced positions among the
    non-center candidates (``equispaced``). ``accel == 1`` or
    ``kind == "full"`` samples every line.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    if accel < 1:
        raise ValueError("acceleration must be >= 1")
    if not 0.0 < center_fraction <= 1.0:
        raise ValueError("center_fraction must be in (0, 1]")
    if num_center_lines(width, center_fraction) < 1:
        raise ValueError("center_fraction * width must cover at least one line")

    lines = np.zeros(width, dtype=bool)
    if accel == 1 or kind == "full":
        lines[:] = True
        return SamplingMask(
            lines=torch.from_numpy(lines),
            accel=1,
            center_fraction=center_fraction,
            kind="full" if kind == "full" else kind,
        )

    total = int(round(width / accel))
    start, stop = center_block(width, center_fraction)
    n_center = stop - start
    if total < n_center:
        raise ValueError(
            f"round(W/R) = {total} lines cannot cover the {n_center}-line center block"
        )
    lines[start:stop] = True

    extra = total - n_center
    candidates = np.concatenate([np.arange(start), np.arange(stop, width)])
    if extra > 0:
        if kind == "random":
            rng = np.random.default_rng(seed)
            chosen = rng.choice(candidates, size=extra, replace=False)
        else:
            picks = equispaced_positions(len(candidates), extra)
            chosen = candidates[picks]
        lines[chosen] = True

    return SamplingMask(
        lines=torch.from_numpy(lines),
        accel=accel,
        center_fraction=center_fraction,
        kind=kind,
    )
