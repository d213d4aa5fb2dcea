"""Deeply supervised training loss.

The total loss sums an unweighted term on the denoiser output, an
unweighted term on the final reconstruction, and per-cascade terms on both
branch intermediates weighted by w_k = 10^((k - K) / (K - 1)). The final
main-branch output therefore counts twice (once unweighted, once with
w_K = 1). The per-image loss is mean squared error, optionally plus a
structural-similarity loss with equal weight.
"""

from __future__ import annotations

import torch
from torch.nn import functional as F

LOSS_MODES = ("mse", "mse+ssim")


def loss_weights(num_cascades: int) -> list[float]:
    """Deep-supervision weights 10^((k - K) / (K - 1)) for k = 1..K."""
    if num_cascades < 2:
        raise ValueError("weights are defined for at least two cascades")
    k_max = num_cascades
    return [10.0 ** ((k - k_max) / (k_max - 1)) for k in range(1, k_max + 1)]


def mse_loss(x: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared complex error, mean of |x - target|^2 over pixels."""
    if x.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(target.shape)}")
    return (x - target.to(x.dtype)).abs().pow(2).mean()


def gaussian_window(win_size: int = 11, sigma: float = 1.5, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(win_size, dtype=dtype) - (win_size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return g.outer(g)


def ssim_index(
    x: torch.Tensor,
    target: torch.Tensor,
    data_range: float | None = None,
    win_size: int = 11,
    sigma: float = 1.5,
) -> torch.Tensor:
    """Mean local structural similarity of two magnitude images (torch).

    Uses a Gaussian window, the standard stability constants, and reflect
    boundary handling; ``data_range`` defaults to the target's peak
    magnitude. Differentiable, used by the training loss.
    """
    if x.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(target.shape)}")
    if min(x.shape[-2:]) < win_size:
        raise ValueError(f"window {win_size} exceeds image size {tuple(x.shape[-2:])}")
    a = x.abs() if x.is_complex() else x
    b = target.abs() if target.is_complex() else target
    b = b.to(a.dtype)
    if data_range is None:
        data_range = float(b.max())
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    win = gaussian_window(win_size, sigma, a.dtype).reshape(1, 1, win_size, win_size)
    pad = win_size // 2

    def filt(img):
        img = img.reshape(1, 1, *img.shape)
        img = F.pad(img, (pad, pad, pad, pad), mode="reflect")
        return F.conv2d(img, win)[0, 0]

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def ssim_loss(x: torch.Tensor, target: torch.Tensor, win_size: int = 11) -> torch.Tensor:
    """1 - SSIM, in [0, 2]."""
    return 1.0 - ssim_index(x, target, win_size=win_size)


def image_loss(x: torch.Tensor, target: torch.Tensor, mode: str = "mse") -> torch.Tensor:
    if mode == "mse":
        return mse_loss(x, target)
    if mode == "mse+ssim":
        return mse_loss(x, target) + ssim_loss(x, target)
    raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")


def total_loss(
    denoised: torch.Tensor | None,
    intermediates: list[tuple[torch.Tensor | None, torch.Tensor]],
    target: torch.Tensor,
    mode: str = "mse",
) -> torch.Tensor:
    """Full deeply supervised objective.

    ``intermediates`` holds one (guidance, main) pair per cascade, in
    order; guidance entries may be None when that branch is disabled.
    ``denoised`` may be None when no denoiser output participates.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    if len(intermediates) == 0:
        raise ValueError("need the full list of cascade intermediates")
    for pair in intermediates:
        if len(pair) != 2 or pair[1] is None:
            raise ValueError("every cascade must contribute a main-branch intermediate")
    weights = loss_weights(len(intermediates)) if len(intermediates) >= 2 else [1.0]
    final = intermediates[-1][1]
    total = image_loss(final, target, mode)
    if denoised is not None:
        total = total + image_loss(denoised, target, mode)
    for w, (x_g, x_m) in zip(weights, intermediates):
        term = image_loss(x_m, target, mode)
        if x_g is not None:
            term = term + image_loss(x_g, target, mode)
        total = total + w * term
    return total
