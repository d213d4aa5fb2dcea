"""Synthetic phantoms, simulated coil profiles, and measurements.

Phantoms are sums of randomly placed ellipses with a smooth synthetic
phase. Two families with distinct ellipse statistics stand in for a
distribution shift between the data the score model saw and the data being
reconstructed:

  * family A: many rounder ellipses (axis ratio 0.70-0.95, 5-8 per image)
  * family B: fewer elongated ellipses (axis ratio 0.25-0.55, 2-4 per image)

Every generator is a pure function of its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from . import ops
from .masks import SamplingMask

FAMILIES = {
    "A": {"n_ellipses": (5, 8), "axis_ratio": (0.70, 0.95)},
    "B": {"n_ellipses": (2, 4), "axis_ratio": (0.25, 0.55)},
}


@dataclass(frozen=True)
class PhantomSpec:
    family: str = "A"
    height: int = 32
    width: int = 32
    n_ellipses: tuple[int, int] | None = None
    axis_ratio: tuple[float, float] | None = None
    intensity: tuple[float, float] = (0.3, 1.0)
    phase_amplitude: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown phantom family {self.family!r}")
        if self.height < 4 or self.width < 4:
            raise ValueError("phantom must be at least 4x4")
        lo, hi = self.ellipse_count_range
        if hi < 1 or lo > hi or lo < 0:
            raise ValueError("ellipse count range must allow at least one ellipse")
        if self.phase_amplitude < 0:
            raise ValueError("phase amplitude must be nonnegative")

    @property
    def ellipse_count_range(self) -> tuple[int, int]:
        return self.n_ellipses if self.n_ellipses is not None else FAMILIES[self.family]["n_ellipses"]

    @property
    def axis_ratio_range(self) -> tuple[float, float]:
        return self.axis_ratio if self.axis_ratio is not None else FAMILIES[self.family]["axis_ratio"]


@dataclass(frozen=True)
class Ellipse:
    cy: float
    cx: float
    a: float  # semi-axis along the rotated x direction, pixels
    b: float  # semi-axis along the rotated y direction, b <= a
    theta: float
    intensity: float

    @property
    def eccentricity(self) -> float:
        return math.sqrt(max(0.0, 1.0 - (self.b / self.a) ** 2))


def draw_ellipses(spec: PhantomSpec) -> list[Ellipse]:
    """Draw the ellipse parameters for a phantom (deterministic per seed)."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.ellipse_count_range
    count = int(rng.integers(max(1, lo), hi + 1))
    r_lo, r_hi = spec.axis_ratio_range
    i_lo, i_hi = spec.intensity
    h, w = spec.height, spec.width
    out = []
    for _ in range(count):
        a = rng.uniform(0.12, 0.38) * min(h, w)
        ratio = rng.uniform(r_lo, r_hi)
        out.append(
            Ellipse(
                cy=rng.uniform(0.22, 0.78) * (h - 1),
                cx=rng.uniform(0.22, 0.78) * (w - 1),
                a=a,
                b=ratio * a,
                theta=rng.uniform(0.0, np.pi),
                intensity=rng.uniform(i_lo, i_hi),
            )
        )
    return out


def _smooth_phase(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Low-frequency random phase surface scaled to max |phase| = amplitude."""
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy = yy / max(h - 1, 1) - 0.5
    xx = xx / max(w - 1, 1) - 0.5
    surf = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(-1.5, 1.5, size=2)
        psi = rng.uniform(0, 2 * np.pi)
        surf += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) + psi)
    peak = np.abs(surf).max()
    if peak > 0:
        surf *= spec.phase_amplitude / peak
    return surf


def make_phantom(spec: PhantomSpec) -> torch.Tensor:
    """Render a complex phantom image with magnitude in [0, 1]."""
    ellipses = draw_ellipses(spec)
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mag = np.zeros((h, w))
    for e in ellipses:
        dy = yy - e.cy
        dx = xx - e.cx
        u = np.cos(e.theta) * dx + np.sin(e.theta) * dy
        v = -np.sin(e.theta) * dx + np.cos(e.theta) * dy
        inside = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
        mag[inside] += e.intensity
    peak = mag.max()
    if peak > 1.0:
        mag /= peak

    rng = np.random.default_rng(spec.seed + 1)
    phase = _smooth_phase(spec, rng)
    img = (mag * np.exp(1j * phase)).astype(np.complex64)
    return torch.from_numpy(img)


def coil_centers(coils: int, height: int, width: int) -> list[tuple[float, float]]:
    """Coil profile centers, evenly spread along the image border.

    Coil i sits at angle 2*pi*i/C on the inscribed border ellipse, so for
    C = 4 the centers are the midpoints of the right, bottom, left and top
    edges (in that order).
    """
    cy = (height - 1) / 2
    cx = (width - 1) / 2
    out = []
    for i in range(coils):
        ang = 2 * np.pi * i / coils
        out.append((cy + cy * np.sin(ang), cx + cx * np.cos(ang)))
    return out


def make_coil_maps(
    coils: int,
    height: int,
    width: int,
    profile_width: float | None = None,
) -> torch.Tensor:
    """Smooth complex Gaussian coil profiles, pixelwise normalized.

    Each coil has a Gaussian magnitude bump centered on the border (see
    :func:`coil_centers`) and a mild coil-specific linear phase ramp. After
    normalization sum_i |S_i|^2 = 1 at every pixel.
    """
    if coils < 1:
        raise ValueError("need at least one coil")
    if profile_width is None:
        profile_width = 0.45 * max(height, width)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    maps = np.zeros((coils, height, width), dtype=np.complex128)
    span = max(height, width)
    for i, (cy, cx) in enumerate(coil_centers(coils, height, width)):
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * profile_width**2))
        ang = 2 * np.pi * i / coils
        ramp = (np.cos(ang) * xx + np.sin(ang) * yy) / span
        maps[i] = mag * np.exp(1j * (np.pi / 4) * ramp)
    t = torch.from_numpy(maps.astype(np.complex64))
    return ops.normalize_maps(t)


@dataclass(frozen=True)
class AcquisitionConfig:
    coils: int = 4
    accel: int = 4
    center_fraction: float = 0.08
    mask_kind: str = "random"
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.coils < 1:
            raise ValueError("coils must be >= 1")
        if self.accel < 1:
            raise ValueError("acceleration must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise std must be nonnegative")


def simulate_measurement(
    x_g: torch.Tensor,
    maps: torch.Tensor,
    mask: SamplingMask,
    noise_std: float = 0.0,
    seed: int = 0,
) -> torch.Tensor:
    """Measurements y = A x_g + b with circular complex Gaussian noise.

    Noise of total std ``noise_std`` (per complex entry, so each real
    component has std ``noise_std / sqrt(2)``) is added on sampled entries
    only; ``noise_std = 0`` returns A x_g exactly.
    """
    if noise_std < 0:
        raise ValueError("noise std must be nonnegative")
    y = ops.forward(x_g, maps, mask)
    if noise_std == 0.0:
        return y
    rng = np.random.default_rng(seed)
    shape = tuple(y.shape)
    noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    noise = torch.from_numpy((noise * (noise_std / np.sqrt(2))).astype(np.complex64))
    return y + ops.apply_mask(noise.to(y.dtype), mask)


def phantom_batch(
    n: int, spec: PhantomSpec, start_seed: int | None = None
) -> list[torch.Tensor]:
    """Render n phantoms with consecutive seeds."""
    base = spec.seed if start_seed is None else start_seed
    return [make_phantom(replace(spec, seed=base + i)) for i in range(n)]
