"""Annealed Langevin sampling with a measurement-consistency term.

One step at annealing level j with step size eta_t = epsilon * sigma_j^2 /
sigma_L^2 updates

    x <- x + eta_t * (score(x; sigma_j) + A*(y - A x) / (gamma_t^2 + sigma^2))
           + sqrt(2 * eta_t) * xi

where xi has independent unit-variance real and imaginary components. The
consistency denominator uses gamma_t = sigma_j (the current annealing
scale) plus the configured measurement-noise std. Chains are deterministic
per seed and abort on non-finite iterates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

from . import ops
from .masks import SamplingMask
from .score import NoiseSchedule, ScoreNet


@dataclass(frozen=True)
class SamplerConfig:
    epsilon: float = 2e-5
    steps_per_level: int = 5
    sigma_meas: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.steps_per_level < 1:
            raise ValueError("steps_per_level must be >= 1")
        if self.sigma_meas < 0:
            raise ValueError("measurement noise std must be nonnegative")


def randn_complex(
    shape: tuple[int, ...],
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.complex64,
) -> torch.Tensor:
    """Complex noise with independent N(0, 1) real and imaginary parts."""
    real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
    return torch.complex(
        torch.randn(shape, generator=generator, dtype=real_dtype),
        torch.randn(shape, generator=generator, dtype=real_dtype),
    )


def langevin_step(
    x: torch.Tensor,
    score_fn: Callable[[torch.Tensor, int], torch.Tensor],
    level: int,
    eta: float,
    noise: torch.Tensor | None,
    y: torch.Tensor | None = None,
    maps: torch.Tensor | None = None,
    mask: SamplingMask | None = None,
    gamma: float = 1.0,
    sigma_meas: float = 0.0,
) -> torch.Tensor:
    """One Langevin update; ``noise=None`` omits the stochastic term."""
    if eta < 0:
        raise ValueError("step size eta must be nonnegative")
    drift = score_fn(x, level)
    if drift.shape != x.shape:
        raise ValueError(f"score shape {tuple(drift.shape)} does not match iterate {tuple(x.shape)}")
    if y is not None:
        weight = 1.0 / (gamma**2 + sigma_meas**2)
        drift = drift + weight * ops.adjoint(y - ops.forward(x, maps, mask), maps, mask)
    out = x + eta * drift
    if noise is not None:
        out = out + math.sqrt(2.0 * eta) * noise
    return out


def run_chain(
    score_fn: Callable[[torch.Tensor, int], torch.Tensor],
    x0: torch.Tensor,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    y: torch.Tensor | None = None,
    maps: torch.Tensor | None = None,
    mask: SamplingMask | None = None,
    generator: torch.Generator | None = None,
    record_log: bool = False,
) -> tuple[torch.Tensor, list[dict]]:
    """Anneal through every level, running ``steps_per_level`` steps each.

    ``x0`` may carry leading batch dimensions when no consistency term is
    used (``y is None``) and the score function broadcasts.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(config.seed)
    x = x0
    sigma_l2 = schedule.sigma_min**2
    log: list[dict] = []
    for level in range(schedule.num_levels):
        sigma = schedule[level]
        eta = config.epsilon * sigma**2 / sigma_l2
        for step in range(config.steps_per_level):
            noise = randn_complex(tuple(x.shape), generator, x.dtype) if config.epsilon > 0 else None
            x = langevin_step(
                x,
                score_fn,
                level,
                eta,
                noise,
                y=y,
                maps=maps,
                mask=mask,
                gamma=sigma,
                sigma_meas=config.sigma_meas,
            )
            if record_log:
                row = {"level": level, "step": step, "eta": eta}
                if y is not None:
                    resid = (ops.forward(x, maps, mask) - y).abs().pow(2).sum().sqrt()
                    row["residual_norm"] = float(resid)
                log.append(row)
        if not torch.isfinite(x.real).all() or not torch.isfinite(x.imag).all():
            raise RuntimeError(f"non-finite iterate at level {level} (after {config.steps_per_level} steps)")
    return x, log


def sample_guidance(
    model: ScoreNet,
    y: torch.Tensor,
    maps: torch.Tensor,
    mask: SamplingMask,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    record_log: bool = False,
) -> tuple[torch.Tensor, list[dict]]:
    """Draw one guidance image for the given measurements.

    The chain starts from sigma_1-scale complex noise and returns its final
    iterate; no averaging or extra denoising is applied.
    """
    if y.shape != maps.shape:
        raise ValueError(f"measurement shape {tuple(y.shape)} does not match maps {tuple(maps.shape)}")
    gen = torch.Generator().manual_seed(config.seed)
    shape = tuple(maps.shape[-2:])
    x0 = schedule.sigma_max * randn_complex(shape, gen, y.dtype)
    with torch.no_grad():
        return run_chain(
            model.score,
            x0,
            schedule,
            config,
            y=y,
            maps=maps,
            mask=mask,
            generator=gen,
            record_log=record_log,
        )
