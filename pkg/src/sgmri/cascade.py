"""Guidance-driven unrolled reconstruction cascades.

Each cascade runs two parallel branches, a guidance branch seeded by the
denoised Langevin sample and a main branch seeded by the zero-filled
image. Within a cascade, ``blocks`` alternating data-fidelity steps and
regularizer networks update each branch; regularizer inputs are densely
connected (the branch input plus every fidelity output so far, with the
main branch also seeing the guidance branch history). The cascade closes
with skip connections and data-consistency blends; the main branch fuses
the two branch outputs through a learned elementwise attention gate before
its blend.

Toggles reproduce the reduced variants: ``use_dense`` switches the dense
regularizer inputs, ``use_guidance`` removes the guidance branch entirely,
``use_guidance_updates`` freezes the guidance image across cascades, and
``use_attention`` replaces the gate with an all-ones map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import ops
from .denoiser import softplus_inverse
from .masks import SamplingMask
from .unet import UNet

PAPER_GIC_WIDTHS = (16, 32, 64, 128)
DESK_GIC_WIDTHS = (4, 8, 16, 32)


@dataclass(frozen=True)
class CascadeConfig:
    cascades: int = 2  # K
    blocks: int = 2  # I, fidelity + regularizer pairs per cascade
    reg_widths: tuple[int, ...] = DESK_GIC_WIDTHS
    attention_width: int = 16
    use_dense: bool = True
    use_guidance: bool = True
    use_guidance_updates: bool = True
    use_attention: bool = True
    share_step_sizes: bool = True
    dc_mode: str = "learned"  # or "hard"
    mu_init: float = 10.0
    alpha_init: float = 1.0

    def __post_init__(self):
        if self.cascades < 1 or self.blocks < 1:
            raise ValueError("need at least one cascade and one block")
        if self.dc_mode not in ("learned", "hard"):
            raise ValueError("dc_mode must be 'learned' or 'hard'")
        if not self.use_guidance and self.use_attention:
            object.__setattr__(self, "use_attention", False)


class AttentionGate(nn.Module):
    """Four-layer convolutional gate producing a map in [0, 1].

    Replicate padding keeps the map spatially constant for constant inputs.
    """

    def __init__(self, in_chans: int, width: int = 16):
        super().__init__()
        self.in_chans = in_chans
        self.layers = nn.Sequential(
            nn.Conv2d(in_chans, width, 3, padding=1, padding_mode="replicate"),
            nn.SiLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1, padding_mode="replicate"),
            nn.SiLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1, padding_mode="replicate"),
            nn.SiLU(inplace=True),
            nn.Conv2d(width, 1, 3, padding=1, padding_mode="replicate"),
            nn.Sigmoid(),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[1] != self.in_chans:
            raise ValueError(f"expected {self.in_chans} channels, got {features.shape[1]}")
        return self.layers(features)


class CascadeBlock(nn.Module):
    """One guidance-guided cascade."""

    def __init__(self, config: CascadeConfig):
        super().__init__()
        self.config = config
        blocks = config.blocks
        n_alpha = blocks if config.share_step_sizes else 2 * blocks
        self.alphas = nn.Parameter(torch.full((n_alpha,), float(config.alpha_init)))
        self.raw_mu_g = nn.Parameter(torch.tensor(softplus_inverse(config.mu_init)))
        self.raw_mu_m = nn.Parameter(torch.tensor(softplus_inverse(config.mu_init)))

        def reg_in_chans(step: int, main: bool) -> int:
            if not config.use_dense:
                return 2
            images = step + 2  # branch input + fidelity history
            if main and config.use_guidance:
                images *= 2
            return 2 * images

        if config.use_guidance:
            self.guidance_regs = nn.ModuleList(
                [UNet(reg_in_chans(i, False), 2, config.reg_widths) for i in range(blocks)]
            )
        else:
            self.guidance_regs = None
        self.main_regs = nn.ModuleList(
            [UNet(reg_in_chans(i, True), 2, config.reg_widths) for i in range(blocks)]
        )
        if config.use_attention:
            att_in = reg_in_chans(blocks - 1, True)
            self.attention = AttentionGate(att_in, config.attention_width)
        else:
            self.attention = None

    def _alpha(self, step: int, main: bool) -> torch.Tensor:
        if self.config.share_step_sizes:
            return self.alphas[step]
        return self.alphas[2 * step + int(main)]

    def _mu(self, raw: torch.Tensor) -> float | torch.Tensor:
        if self.config.dc_mode == "hard":
            return float("inf")
        return nn.functional.softplus(raw)

    def _regularize(self, net: UNet, inputs: list[torch.Tensor]) -> torch.Tensor:
        dtype = next(net.parameters()).dtype
        stacked = ops.complex_to_channels(*inputs).to(dtype)
        return ops.channels_to_complex(net(stacked))

    def forward(
        self,
        x_g: torch.Tensor | None,
        x_m: torch.Tensor,
        y: torch.Tensor,
        maps: torch.Tensor,
        mask: SamplingMask,
        return_parts: bool = False,
    ):
        cfg = self.config
        cur_m = x_m
        hist_m: list[torch.Tensor] = []
        parts: dict = {}
        if cfg.use_guidance:
            if x_g is None:
                raise ValueError("guidance branch is enabled but no guidance image was given")
            cur_g = x_g
            hist_g: list[torch.Tensor] = []

        for i in range(cfg.blocks):
            if cfg.use_guidance:
                r_g = ops.data_fidelity_step(cur_g, y, maps, mask, self._alpha(i, main=False))
                hist_g.append(r_g)
            r_m = ops.data_fidelity_step(cur_m, y, maps, mask, self._alpha(i, main=True))
            hist_m.append(r_m)

            if cfg.use_dense:
                if cfg.use_guidance:
                    cur_g = self._regularize(self.guidance_regs[i], [x_g, *hist_g])
                    cur_m = self._regularize(self.main_regs[i], [x_g, *hist_g, x_m, *hist_m])
                else:
                    cur_m = self._regularize(self.main_regs[i], [x_m, *hist_m])
            else:
                if cfg.use_guidance:
                    cur_g = self._regularize(self.guidance_regs[i], [r_g])
                cur_m = self._regularize(self.main_regs[i], [r_m])

        if cfg.use_guidance:
            if cfg.use_guidance_updates:
                x_g_next = ops.data_consistency_image(x_g + cur_g, y, maps, mask, self._mu(self.raw_mu_g))
            else:
                x_g_next = x_g
            if self.attention is not None:
                if cfg.use_dense:
                    att_inputs = [x_g, *hist_g, x_m, *hist_m]
                else:
                    att_inputs = [hist_g[-1], hist_m[-1]]
                dtype = next(self.attention.parameters()).dtype
                gate = self.attention(ops.complex_to_channels(*att_inputs).to(dtype))[0, 0]
                gate = gate.to(cur_m.real.dtype)
                fused = cur_m * gate + cur_g * (1.0 - gate)
                parts["gate"] = gate
            else:
                fused = cur_m
            parts["guidance_out"] = cur_g
            parts["hist_g"] = hist_g
        else:
            x_g_next = None
            fused = cur_m
        x_m_next = ops.data_consistency_image(x_m + fused, y, maps, mask, self._mu(self.raw_mu_m))
        if return_parts:
            parts.update({"main_out": cur_m, "fused": fused, "hist_m": hist_m})
            return x_g_next, x_m_next, parts
        return x_g_next, x_m_next


class UnrolledNet(nn.Module):
    """Chain of cascades; returns every intermediate pair for supervision."""

    def __init__(self, config: CascadeConfig):
        super().__init__()
        self.config = config
        self.cascades = nn.ModuleList([CascadeBlock(config) for _ in range(config.cascades)])

    def forward(
        self,
        x_g0: torch.Tensor | None,
        x_m0: torch.Tensor,
        y: torch.Tensor,
        maps: torch.Tensor,
        mask: SamplingMask,
    ) -> list[tuple[torch.Tensor | None, torch.Tensor]]:
        x_g, x_m = x_g0, x_m0
        out = []
        for block in self.cascades:
            x_g, x_m = block(x_g, x_m, y, maps, mask)
            out.append((x_g, x_m))
        return out
