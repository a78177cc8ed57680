"""Full-reference quality metrics on [0, 1] RGB images.

PSNR uses mean squared error over all three channels (RGB mean-MSE, no
luma conversion). SSIM follows the original formulation: 11x11 Gaussian
window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, valid windows only,
averaged over channels.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .images import ImageRGB

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _paired(a: ImageRGB, b: ImageRGB, op: str) -> tuple[np.ndarray, np.ndarray]:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"{op}: image shapes {a.pixels.shape} and "
                         f"{b.pixels.shape} differ")
    return a.pixels, b.pixels


def psnr(a: ImageRGB, b: ImageRGB) -> float:
    """10*log10(1/MSE) in dB, capped at 99."""
    pa, pb = _paired(a, b, "psnr")
    mse = float(np.mean((pa - pb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def mae(a: ImageRGB, b: ImageRGB) -> float:
    """Mean absolute error over all channels and pixels."""
    pa, pb = _paired(a, b, "mae")
    return float(np.mean(np.abs(pa - pb)))


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(n) - (n - 1) / 2.0
    w = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable 2-D correlation, valid region only."""
    n = w.size
    rows = sliding_window_view(x, n, axis=0) @ w
    return sliding_window_view(rows, n, axis=1) @ w


def ssim(a: ImageRGB, b: ImageRGB) -> float:
    """Mean local structural similarity over valid windows, in [-1, 1]."""
    pa, pb = _paired(a, b, "ssim")
    h, w_ = pa.shape[1], pa.shape[2]
    if h < SSIM_WINDOW or w_ < SSIM_WINDOW:
        raise ShapeError(f"ssim: images must be at least "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w_}")
    win = _gaussian_window()
    scores = []
    for c in range(3):
        x, y = pa[c], pb[c]
        mu_x = _filter_valid(x, win)
        mu_y = _filter_valid(y, win)
        var_x = _filter_valid(x * x, win) - mu_x * mu_x
        var_y = _filter_valid(y * y, win) - mu_y * mu_y
        cov = _filter_valid(x * y, win) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + _C1) * (2.0 * cov + _C2)
        den = (mu_x ** 2 + mu_y ** 2 + _C1) * (var_x + var_y + _C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
