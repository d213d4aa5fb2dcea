"""Small convolutional building blocks shared by the network modules.

Activations are smooth (SiLU) throughout so that every loss in the package
is C^1 in the parameters, which keeps finite-difference gradient checks
well conditioned. Normalization layers carry no running statistics, so
evaluation is deterministic and independent of training mode.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


def num_groups(channels: int) -> int:
    """Largest group count <= 8 that divides ``channels`` with groups of >= 2."""
    g = min(8, channels)
    while g > 1 and (channels % g or channels // g < 2):
        g -= 1
    return max(g, 1)


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by instance norm and SiLU."""

    def __init__(self, in_chans: int, out_chans: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(in_chans, out_chans, kernel_size=3, padding=1, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.SiLU(inplace=True),
            nn.Conv2d(out_chans, out_chans, kernel_size=3, padding=1, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.SiLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class TransposeConvBlock(nn.Module):
    """2x upsampling transpose convolution with instance norm and SiLU."""

    def __init__(self, in_chans: int, out_chans: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.ConvTranspose2d(in_chans, out_chans, kernel_size=2, stride=2, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.SiLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class UNet(nn.Module):
    """Plain encoder-decoder with skip connections.

    ``widths`` gives the channel count at each scale; the spatial size is
    halved ``len(widths) - 1`` times, so inputs must be divisible by
    ``2 ** (len(widths) - 1)`` and large enough to keep the bottleneck at
    least 2x2.
    """

    def __init__(self, in_chans: int, out_chans: int, widths: tuple[int, ...] = (8, 16, 32, 64)):
        super().__init__()
        if len(widths) < 1:
            raise ValueError("need at least one width")
        self.in_chans = in_chans
        self.out_chans = out_chans
        self.widths = tuple(widths)

        self.down_layers = nn.ModuleList([ConvBlock(in_chans, widths[0])])
        for lo, hi in zip(widths[:-1], widths[1:]):
            self.down_layers.append(ConvBlock(lo, hi))

        self.up_transpose = nn.ModuleList()
        self.up_layers = nn.ModuleList()
        for hi, lo in zip(widths[:0:-1], widths[-2::-1]):
            self.up_transpose.append(TransposeConvBlock(hi, lo))
            self.up_layers.append(ConvBlock(lo * 2, lo))
        self.head = nn.Conv2d(widths[0], out_chans, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        depth = len(self.widths)
        h, w = x.shape[-2:]
        factor = 2 ** (depth - 1)
        if h % factor or w % factor or (depth > 1 and min(h, w) // factor < 2):
            raise ValueError(
                f"input {h}x{w} is incompatible with a depth-{depth} encoder-decoder"
            )
        skips = []
        out = x
        for i, layer in enumerate(self.down_layers):
            out = layer(out)
            if i < depth - 1:
                skips.append(out)
                out = F.avg_pool2d(out, kernel_size=2)
        for up, conv in zip(self.up_transpose, self.up_layers):
            out = up(out)
            out = torch.cat([out, skips.pop()], dim=1)
            out = conv(out)
        return self.head(out)
