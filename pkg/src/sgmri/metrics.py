"""Image quality metrics on magnitude images (numpy implementations).

These are intentionally independent of the torch loss implementations so
the two can cross-check each other.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 100.0


def _magnitude(x) -> np.ndarray:
    if torch.is_tensor(x):
        x = x.detach().cpu().numpy()
    x = np.asarray(x)
    return np.abs(x) if np.iscomplexobj(x) else x.astype(np.float64)


def psnr(x, reference) -> float:
    """Peak signal-to-noise ratio in dB, 20 log10(peak / rmse), capped.

    Computed on magnitude images with the reference's peak magnitude;
    identical images return the 100 dB cap instead of infinity.
    """
    a = _magnitude(x)
    b = _magnitude(reference)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    peak = b.max()
    if peak <= 0:
        raise ValueError("reference image is empty")
    rmse = np.sqrt(np.mean((a - b) ** 2))
    if rmse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(20.0 * np.log10(peak / rmse)))


def _gaussian_kernel(win_size: int, sigma: float) -> np.ndarray:
    coords = np.arange(win_size) - (win_size - 1) / 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(
    x,
    reference,
    data_range: float | None = None,
    win_size: int = 11,
    sigma: float = 1.5,
) -> float:
    """Mean local structural similarity on magnitude images.

    Gaussian window (default 11x11, sigma 1.5), standard stability
    constants, reflect boundaries; ``data_range`` defaults to the
    reference's peak magnitude.
    """
    a = _magnitude(x)
    b = _magnitude(reference)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < win_size:
        raise ValueError(f"window {win_size} exceeds image size {a.shape}")
    if data_range is None:
        data_range = float(b.max())
    if data_range <= 0:
        raise ValueError("data range must be positive")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    kern = _gaussian_kernel(win_size, sigma)

    def filt(img):
        out = correlate1d(img, kern, axis=0, mode="reflect")
        return correlate1d(out, kern, axis=1, mode="reflect")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
