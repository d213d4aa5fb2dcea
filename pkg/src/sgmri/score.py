"""Noise-conditional score network, its schedule, and score-matching training.

The network is a U-shaped model with residual encoder blocks and decoder
stages whose outputs double as feature taps for downstream extraction. It
estimates the score of the data distribution smoothed at a configurable
set of noise scales; conditioning is a learned per-level bias added at
every decoder stage, and the raw head output is divided by the level's
sigma so the target magnitude is balanced across levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import ops
from .unet import num_groups

PAPER_SCORE_WIDTHS = (128, 128, 256, 256, 256, 512)
DESK_SCORE_WIDTHS = (16, 16, 32, 32, 32, 64)


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing, geometrically spaced noise scales."""

    sigmas: tuple[float, ...]

    def __post_init__(self):
        s = self.sigmas
        if len(s) < 2:
            raise ValueError("schedule needs at least two levels")
        if any(v <= 0 for v in s):
            raise ValueError("noise scales must be positive")
        if any(b >= a for a, b in zip(s[:-1], s[1:])):
            raise ValueError("noise scales must be strictly decreasing")
        ratios = [b / a for a, b in zip(s[:-1], s[1:])]
        if max(ratios) - min(ratios) > 1e-9:
            raise ValueError("noise scales must be geometrically spaced")

    @property
    def num_levels(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_max(self) -> float:
        return self.sigmas[0]

    @property
    def sigma_min(self) -> float:
        return self.sigmas[-1]

    def __getitem__(self, level: int) -> float:
        return self.sigmas[level]


def make_schedule(sigma_max: float, sigma_min: float, num_levels: int) -> NoiseSchedule:
    """Geometric sequence from sigma_max down to sigma_min, inclusive."""
    if num_levels < 2:
        raise ValueError("schedule needs at least two levels")
    if not sigma_max > sigma_min > 0:
        raise ValueError("need sigma_max > sigma_min > 0")
    sigmas = np.geomspace(sigma_max, sigma_min, num_levels)
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    return NoiseSchedule(sigmas=tuple(float(v) for v in sigmas))


def suggest_sigma_max(images: list[torch.Tensor], max_images: int = 64) -> float:
    """Largest pairwise distance between training images (subsampled)."""
    subset = images[:max_images]
    best = 0.0
    for i in range(len(subset)):
        for j in range(i + 1, len(subset)):
            d = (subset[i] - subset[j]).abs().pow(2).sum().sqrt().item()
            best = max(best, d)
    if best <= 0:
        raise ValueError("images are all identical; cannot calibrate sigma_max")
    return best


@dataclass(frozen=True)
class ScoreModelConfig:
    widths: tuple[int, ...] = DESK_SCORE_WIDTHS
    num_levels: int = 10

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("score network needs at least two levels of widths")
        if self.num_levels < 2:
            raise ValueError("need at least two noise levels")


class _ResBlock(nn.Module):
    def __init__(self, in_chans: int, out_chans: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(num_groups(in_chans), in_chans)
        self.conv1 = nn.Conv2d(in_chans, out_chans, 3, padding=1)
        self.norm2 = nn.GroupNorm(num_groups(out_chans), out_chans)
        self.conv2 = nn.Conv2d(out_chans, out_chans, 3, padding=1)
        self.skip = nn.Conv2d(in_chans, out_chans, 1) if in_chans != out_chans else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ScoreNet(nn.Module):
    """U-shaped score estimator with per-level conditioning and feature taps.

    ``taps`` exposes one feature grid per depth level, ordered coarsest to
    finest: the conditioned bottleneck output followed by every decoder
    stage output. Tap ``i`` has ``tap_channels[i]`` channels and spatial
    size ``H / 2**(levels - 1 - i)``.
    """

    def __init__(self, config: ScoreModelConfig, schedule: NoiseSchedule):
        super().__init__()
        if schedule.num_levels != config.num_levels:
            raise ValueError("schedule length does not match model config")
        self.config = config
        widths = config.widths
        depth = len(widths)
        self.depth = depth
        self.register_buffer("sigmas", torch.tensor(schedule.sigmas, dtype=torch.float32))

        self.stem = nn.Conv2d(2, widths[0], 3, padding=1)
        self.encoders = nn.ModuleList(
            [_ResBlock(widths[0], widths[0])]
            + [_ResBlock(widths[i - 1], widths[i]) for i in range(1, depth)]
        )
        self.decover = nn.ModuleList()  # upsampling convs, deepest first
        self.decoders = nn.ModuleList()
        for i in range(depth - 1, 0, -1):
            self.decover.append(nn.ConvTranspose2d(widths[i], widths[i - 1], 2, stride=2))
            self.decoders.append(_ResBlock(2 * widths[i - 1], widths[i - 1]))
        # one conditioning embedding per tap: bottleneck + each decoder stage
        emb_widths = [widths[-1]] + [widths[i] for i in range(depth - 2, -1, -1)]
        self.cond = nn.ModuleList([nn.Embedding(config.num_levels, w) for w in emb_widths])
        self.head = nn.Conv2d(widths[0], 2, 3, padding=1)

    @property
    def num_levels(self) -> int:
        return int(self.sigmas.shape[0])

    @property
    def tap_channels(self) -> list[int]:
        widths = self.config.widths
        return [widths[-1]] + [widths[i] for i in range(self.depth - 2, -1, -1)]

    def _check_level(self, level: int):
        if not 0 <= level < self.num_levels:
            raise ValueError(f"level {level} out of range [0, {self.num_levels})")

    def _features(self, x2: torch.Tensor, level: int) -> tuple[torch.Tensor, list[torch.Tensor]]:
        h, w = x2.shape[-2:]
        factor = 2 ** (self.depth - 1)
        if h % factor or w % factor:
            raise ValueError(f"input {h}x{w} must be divisible by {factor}")
        lvl = torch.tensor([level], device=x2.device)
        out = self.stem(x2)
        skips = []
        for i, enc in enumerate(self.encoders):
            out = enc(out)
            if i < self.depth - 1:
                skips.append(out)
                out = F.avg_pool2d(out, kernel_size=2)
        out = out + self.cond[0](lvl).reshape(1, -1, 1, 1).to(out.dtype)
        taps = [out]
        for i, (up, dec) in enumerate(zip(self.decover, self.decoders)):
            out = up(out)
            out = dec(torch.cat([out, skips.pop()], dim=1))
            out = out + self.cond[i + 1](lvl).reshape(1, -1, 1, 1).to(out.dtype)
            taps.append(out)
        return out, taps

    def forward(self, x2: torch.Tensor, level: int) -> torch.Tensor:
        """Raw two-channel score estimate for a (1, 2, H, W) input."""
        self._check_level(level)
        out, _ = self._features(x2, level)
        sigma = self.sigmas[level].to(out.dtype)
        return self.head(out) / sigma

    def score(self, x: torch.Tensor, level: int) -> torch.Tensor:
        """Score field for a complex (H, W) image at the given level."""
        self._check_level(level)
        x2 = ops.complex_to_channels(x).to(next(self.parameters()).dtype)
        out = self.forward(x2, level)
        return ops.channels_to_complex(out)

    def taps(self, x: torch.Tensor, level: int) -> list[torch.Tensor]:
        """Decoder-side feature taps for a complex (H, W) image."""
        self._check_level(level)
        x2 = ops.complex_to_channels(x).to(next(self.parameters()).dtype)
        _, taps = self._features(x2, level)
        return taps


def build_score_model(config: ScoreModelConfig, schedule: NoiseSchedule, seed: int = 0) -> ScoreNet:
    """Construct a score network with seeded, reproducible initialization."""
    torch.manual_seed(seed)
    return ScoreNet(config, schedule)


def _as_batch(images: list[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    if torch.is_tensor(images):
        batch = images if images.ndim == 3 else images.unsqueeze(0)
    else:
        if len(images) == 0:
            raise ValueError("empty batch")
        batch = torch.stack(list(images), dim=0)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    return batch


def dsm_loss(
    model: ScoreNet,
    images: list[torch.Tensor] | torch.Tensor,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> torch.Tensor:
    """Denoising score-matching objective.

    For each image a level j is drawn uniformly, the image is perturbed by
    sigma_j * z with z having independent unit-variance real and imaginary
    components, and the model output is regressed onto -(perturbed - clean)
    / sigma_j^2 with per-level weight sigma_j^2. Deterministic per seed.
    """
    if schedule.num_levels != model.num_levels:
        raise ValueError("schedule length does not match the model")
    batch = _as_batch(images)
    gen = torch.Generator().manual_seed(seed)
    try:
        real_dtype = next(iter(model.parameters())).dtype
    except StopIteration:
        real_dtype = batch.real.dtype
    total = batch.new_zeros((), dtype=real_dtype)
    levels = torch.randint(0, schedule.num_levels, (batch.shape[0],), generator=gen)
    for b in range(batch.shape[0]):
        level = int(levels[b])
        sigma = schedule[level]
        x = batch[b]
        shape = x.shape
        z = torch.complex(
            torch.randn(shape, generator=gen, dtype=real_dtype),
            torch.randn(shape, generator=gen, dtype=real_dtype),
        )
        perturbed = x.to(z.dtype) + sigma * z
        target = -z / sigma
        est = model.score(perturbed, level)
        total = total + sigma**2 * (est - target).abs().pow(2).mean()
    return total / batch.shape[0]


def train_score(
    model: ScoreNet,
    images: list[torch.Tensor],
    schedule: NoiseSchedule,
    epochs: int = 20,
    lr: float = 1e-3,
    seed: int = 0,
    batch_size: int = 8,
    log_every: int = 0,
) -> list[float]:
    """Optimize the score network; returns per-epoch mean loss history."""
    if len(images) == 0:
        raise ValueError("training set is empty")
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    order_gen = torch.Generator().manual_seed(seed)
    history = []
    step = 0
    for epoch in range(epochs):
        perm = torch.randperm(len(images), generator=order_gen)
        epoch_losses = []
        for start in range(0, len(images), batch_size):
            batch = [images[int(i)] for i in perm[start : start + batch_size]]
            loss = dsm_loss(model, batch, schedule, seed=seed + 7919 * step + 1)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite score-matching loss at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
            step += 1
        history.append(float(np.mean(epoch_losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"score epoch {epoch + 1}/{epochs}: dsm loss {history[-1]:.5f}")
    return history
