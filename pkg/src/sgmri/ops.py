"""Multicoil MRI operators.

Conventions:
  * images and k-space grids are complex tensors; an image is (H, W), a
    coil stack (image or k-space) is (C, H, W), sensitivity maps (C, H, W)
  * Fourier transforms are centered (zero frequency at ``H//2, W//2``) and
    unitary, so the adjoint of the forward transform is its inverse
  * sensitivity maps satisfy sum_i |S_i|^2 = 1 at every pixel, which makes
    reduce(expand(x)) == x

All functions are pure and differentiable under torch autograd; they follow
the dtype of their inputs (complex64 or complex128).
"""

from __future__ import annotations

import math

import torch

from .masks import SamplingMask


def _check_spatial(x: torch.Tensor, name: str = "input"):
    if x.ndim < 2:
        raise ValueError(f"{name} must have at least 2 dims, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h < 4 or w < 4:
        raise ValueError(f"{name} must be at least 4x4, got {h}x{w}")


def complex_to_channels(*images: torch.Tensor) -> torch.Tensor:
    """Stack complex (H, W) images into a (1, 2n, H, W) real tensor."""
    parts = []
    for img in images:
        parts.append(img.real)
        parts.append(img.imag)
    return torch.stack(parts, dim=0).unsqueeze(0)


def channels_to_complex(t: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`complex_to_channels` for a single image."""
    if t.ndim != 4 or t.shape[1] != 2:
        raise ValueError(f"expected (1, 2, H, W), got {tuple(t.shape)}")
    return torch.complex(t[0, 0], t[0, 1])


def coils_to_channels(coils: torch.Tensor) -> torch.Tensor:
    """(C, H, W) complex -> (1, 2C, H, W) real, coil-major interleaving."""
    return torch.cat([coils.real, coils.imag], dim=0).unsqueeze(0)


def channels_to_coils(t: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`coils_to_channels`."""
    c2 = t.shape[1]
    if t.ndim != 4 or c2 % 2:
        raise ValueError(f"expected (1, 2C, H, W), got {tuple(t.shape)}")
    c = c2 // 2
    return torch.complex(t[0, :c], t[0, c:])


def fft2c(img: torch.Tensor) -> torch.Tensor:
    """Centered, unitary 2D FFT over the last two dims."""
    _check_spatial(img)
    x = torch.fft.ifftshift(img, dim=(-2, -1))
    k = torch.fft.fft2(x, norm="ortho")
    return torch.fft.fftshift(k, dim=(-2, -1))


def ifft2c(ksp: torch.Tensor) -> torch.Tensor:
    """Exact inverse of :func:`fft2c`."""
    _check_spatial(ksp)
    k = torch.fft.ifftshift(ksp, dim=(-2, -1))
    x = torch.fft.ifft2(k, norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def normalize_maps(maps: torch.Tensor, tol: float = 1e-12) -> torch.Tensor:
    """Scale maps pixelwise so that sum_i |S_i|^2 = 1."""
    if maps.ndim != 3:
        raise ValueError(f"maps must be (C, H, W), got {tuple(maps.shape)}")
    norm = maps.abs().pow(2).sum(dim=0).sqrt().clamp_min(tol)
    return maps / norm


def check_maps(maps: torch.Tensor, tol: float = 1e-6):
    """Raise if the normalization invariant is violated."""
    err = (maps.abs().pow(2).sum(dim=0) - 1.0).abs().max()
    if err > tol:
        raise ValueError(f"sensitivity maps are not normalized: max |sum|S|^2 - 1| = {err:.3e}")


def expand(x: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """Coil-specific images S_i * x from a single image."""
    if x.ndim != 2 or maps.ndim != 3:
        raise ValueError(f"expected image (H, W) and maps (C, H, W), got {tuple(x.shape)} / {tuple(maps.shape)}")
    if x.shape != maps.shape[-2:]:
        raise ValueError(f"image shape {tuple(x.shape)} does not match maps {tuple(maps.shape)}")
    return maps * x.unsqueeze(0)


def reduce(coils: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """Coil combination sum_i conj(S_i) * x_i."""
    if coils.shape != maps.shape:
        raise ValueError(f"coil stack {tuple(coils.shape)} does not match maps {tuple(maps.shape)}")
    return (maps.conj() * coils).sum(dim=0)


def apply_mask(ksp: torch.Tensor, mask: SamplingMask) -> torch.Tensor:
    """Zero out unsampled lines; result is exactly zero off the mask."""
    h, w = ksp.shape[-2:]
    if mask.width != w:
        raise ValueError(f"mask width {mask.width} does not match k-space width {w}")
    grid = mask.grid(h)
    return torch.where(grid, ksp, torch.zeros((), dtype=ksp.dtype))


def forward(x: torch.Tensor, maps: torch.Tensor, mask: SamplingMask) -> torch.Tensor:
    """Acquisition operator: mask o fft2c o expand."""
    return apply_mask(fft2c(expand(x, maps)), mask)


def adjoint(y: torch.Tensor, maps: torch.Tensor, mask: SamplingMask) -> torch.Tensor:
    """Adjoint of :func:`forward`: reduce o ifft2c o mask."""
    if y.shape != maps.shape:
        raise ValueError(f"k-space {tuple(y.shape)} does not match maps {tuple(maps.shape)}")
    return reduce(ifft2c(apply_mask(y, mask)), maps)


def data_consistency(
    y_c: torch.Tensor,
    y: torch.Tensor,
    mask: SamplingMask,
    mu: float | torch.Tensor,
) -> torch.Tensor:
    """Blend predicted k-space with measurements on the sampled set.

    Off the mask the prediction passes through; on the mask the entry
    becomes ``(y_c + mu * y) / (1 + mu)``. ``mu = inf`` replaces sampled
    entries by the measurements outright.
    """
    if y_c.shape != y.shape:
        raise ValueError(f"k-space shapes differ: {tuple(y_c.shape)} vs {tuple(y.shape)}")
    h = y_c.shape[-2]
    grid = mask.grid(h)
    if not torch.is_tensor(mu):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        if math.isinf(mu):
            return torch.where(grid, y, y_c)
        mu = torch.as_tensor(mu, dtype=y_c.real.dtype)
    elif float(mu.detach()) < 0:
        raise ValueError("mu must be nonnegative")
    blended = (y_c + mu * y) / (1.0 + mu)
    return torch.where(grid, blended, y_c)


def data_consistency_image(
    x: torch.Tensor,
    y: torch.Tensor,
    maps: torch.Tensor,
    mask: SamplingMask,
    mu: float | torch.Tensor,
) -> torch.Tensor:
    """Image-domain data consistency: transform, blend on the mask, return."""
    k = fft2c(expand(x, maps))
    k = data_consistency(k, y, mask, mu)
    return reduce(ifft2c(k), maps)


def data_fidelity_step(
    x: torch.Tensor,
    y: torch.Tensor,
    maps: torch.Tensor,
    mask: SamplingMask,
    alpha: float | torch.Tensor,
) -> torch.Tensor:
    """Gradient step on the data term: x - alpha * A*(A x - y)."""
    residual = forward(x, maps, mask) - y
    return x - alpha * adjoint(residual, maps, mask)
