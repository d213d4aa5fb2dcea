"""Coarse denoising of Langevin guidance images.

Two feature extractors feed a residual fusion network:

  * the cross-domain extractor maps the guidance image to multicoil
    k-space, runs an encoder-decoder over the stacked coil channels,
    applies a learnable data-consistency blend against the measurements,
    and returns to a single image
  * the score-feature extractor pushes the guidance image through a
    trainable copy of the score network, reduces the four finest decoder
    taps with 1x1 convolutions, and fuses them coarse-to-fine with
    upsampling blocks that halve their input channels

The fusion network sees the guidance image alongside both extractor
outputs and predicts a residual correction, so zeroing its head leaves the
input unchanged. Either extractor can be disabled, in which case its slot
in the concatenation is zero-filled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from . import ops
from .masks import SamplingMask
from .score import ScoreNet
from .unet import UNet

PAPER_DM_WIDTHS = (32, 64, 128, 256)
DESK_DM_WIDTHS = (8, 16, 32, 64)
PAPER_SIE_REDUCE = (16, 32, 64, 128)
DESK_SIE_REDUCE = (4, 8, 16, 32)


def softplus_inverse(value: float) -> float:
    return math.log(math.expm1(value))


@dataclass(frozen=True)
class DenoiserConfig:
    coils: int = 4
    cie_widths: tuple[int, ...] = DESK_DM_WIDTHS
    fusion_widths: tuple[int, ...] = DESK_DM_WIDTHS
    sie_reduce: tuple[int, ...] = DESK_SIE_REDUCE
    use_cie: bool = True
    use_sie: bool = True
    trainable_psn: bool = True
    sie_level: int | None = None  # None = finest noise level
    mu_init: float = 10.0

    def __post_init__(self):
        if self.coils < 1:
            raise ValueError("coils must be >= 1")
        if len(self.sie_reduce) != 4:
            raise ValueError("score-feature extractor reduces exactly four taps")
        for lo, hi in zip(self.sie_reduce[:-1], self.sie_reduce[1:]):
            if hi != 2 * lo:
                raise ValueError("reduce channels must double from finest to coarsest tap")
        if self.mu_init <= 0:
            raise ValueError("mu must start positive")


class CrossDomainExtractor(nn.Module):
    """k-space encoder-decoder with a learnable data-consistency blend."""

    def __init__(self, coils: int, widths: tuple[int, ...] = DESK_DM_WIDTHS, mu_init: float = 10.0):
        super().__init__()
        self.coils = coils
        self.net = UNet(2 * coils, 2 * coils, widths)
        self.raw_mu = nn.Parameter(torch.tensor(softplus_inverse(mu_init)))

    @property
    def mu(self) -> torch.Tensor:
        return nn.functional.softplus(self.raw_mu)

    def forward(
        self,
        x_t: torch.Tensor,
        y: torch.Tensor,
        maps: torch.Tensor,
        mask: SamplingMask,
        return_kspace: bool = False,
    ):
        k = ops.fft2c(ops.expand(x_t, maps))
        dtype = next(self.net.parameters()).dtype
        channels = ops.coils_to_channels(k).to(dtype)
        corrected = ops.channels_to_coils(self.net(channels))
        blended = ops.data_consistency(corrected, y.to(corrected.dtype), mask, self.mu.to(dtype))
        image = ops.reduce(ops.ifft2c(blended), maps.to(blended.dtype))
        if return_kspace:
            return image, blended
        return image


class _ConvBR(nn.Module):
    """3x3 conv halving channels, with instance norm and SiLU."""

    def __init__(self, chans: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(chans, chans // 2, 3, padding=1, bias=False),
            nn.InstanceNorm2d(chans // 2),
            nn.SiLU(inplace=True),
        )

    def forward(self, x):
        return self.layers(x)


class _DeconvBR(nn.Module):
    """2x upsampling deconv halving channels, with instance norm and SiLU."""

    def __init__(self, chans: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.ConvTranspose2d(chans, chans // 2, 2, stride=2, bias=False),
            nn.InstanceNorm2d(chans // 2),
            nn.SiLU(inplace=True),
        )

    def forward(self, x):
        return self.layers(x)


class ScoreFeatureExtractor(nn.Module):
    """Multi-level feature extraction from a copy of the score network.

    The four finest taps (spatial sizes H/8 ... H) are each reduced by a
    1x1 convolution to ``reduce[i]`` channels (finest to coarsest order
    ``reduce[0] ... reduce[3]``). Starting from the coarsest reduced tap,
    each stage upsamples (halving channels), concatenates the next reduced
    tap (restoring the previous count), and convolves (halving again);
    a final 1x1 maps the ``reduce[0]`` remaining channels to one complex
    image.
    """

    def __init__(
        self,
        score_model: ScoreNet,
        reduce_channels: tuple[int, ...] = DESK_SIE_REDUCE,
        trainable: bool = True,
        level: int | None = None,
    ):
        super().__init__()
        if len(score_model.tap_channels) < 4:
            raise ValueError("score network must expose at least four taps")
        self.psn = score_model
        self.trainable = trainable
        if not trainable:
            self.psn.requires_grad_(False)
        self.level = score_model.num_levels - 1 if level is None else level
        tap_chans = score_model.tap_channels[-4:]  # coarsest to finest of the used taps
        reduced = tuple(reversed(reduce_channels))  # coarsest to finest
        self.reducers = nn.ModuleList(
            [nn.Conv2d(c, r, 1) for c, r in zip(tap_chans, reduced)]
        )
        stages = []
        chans = reduced[0]
        for _ in range(3):
            # upsample halves, the concatenated tap restores, the conv halves
            stages.append(nn.ModuleDict({"up": _DeconvBR(chans), "conv": _ConvBR(chans)}))
            chans //= 2
        self.stages = nn.ModuleList(stages)
        self.head = nn.Conv2d(reduce_channels[0], 2, 1)

    def channel_trace(self) -> list[int]:
        """Channel counts along the fusion chain, for shape auditing."""
        trace = [self.reducers[0].out_channels]
        c = trace[0]
        for i in range(3):
            c //= 2  # upsample halves
            trace.append(c)
            c += self.reducers[i + 1].out_channels  # concat restores
            trace.append(c)
            c //= 2  # conv halves
            trace.append(c)
        trace.append(self.head.out_channels)
        return trace

    def forward(self, x_t: torch.Tensor) -> torch.Tensor:
        taps = self.psn.taps(x_t, self.level)[-4:]
        reduced = [r(t) for r, t in zip(self.reducers, taps)]
        h = reduced[0]
        for stage, skip in zip(self.stages, reduced[1:]):
            h = stage["up"](h)
            h = torch.cat([h, skip], dim=1)
            h = stage["conv"](h)
        return ops.channels_to_complex(self.head(h))


class DenoisingModule(nn.Module):
    """Residual guidance denoiser combining both extractors."""

    def __init__(self, config: DenoiserConfig, score_model: ScoreNet | None):
        super().__init__()
        self.config = config
        self.cie = (
            CrossDomainExtractor(config.coils, config.cie_widths, config.mu_init)
            if config.use_cie
            else None
        )
        if config.use_sie:
            if score_model is None:
                raise ValueError("score-feature extraction requires a score model")
            self.sie = ScoreFeatureExtractor(
                score_model, config.sie_reduce, config.trainable_psn, config.sie_level
            )
        else:
            self.sie = None
        self.fusion = UNet(6, 2, config.fusion_widths)

    def forward(
        self,
        x_t: torch.Tensor,
        y: torch.Tensor,
        maps: torch.Tensor,
        mask: SamplingMask,
    ) -> torch.Tensor:
        zero = torch.zeros_like(x_t)
        x_d = self.cie(x_t, y, maps, mask) if self.cie is not None else zero
        x_p = self.sie(x_t) if self.sie is not None else zero
        dtype = next(self.fusion.parameters()).dtype
        stacked = ops.complex_to_channels(x_t, x_p, x_d).to(dtype)
        residual = ops.channels_to_complex(self.fusion(stacked))
        return x_t + residual.to(x_t.dtype)
