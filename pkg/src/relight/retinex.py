"""Image <-> (reflectance, illumination) conversion and toy paired data.

Decomposition uses the max-channel estimate: illumination is the
brightest channel plus a small floor, reflectance is the quotient. That
makes the round trip exact up to clamping, which is all the training
machinery needs from a decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .images import ImageRGB


@dataclass(frozen=True)
class RetinexPair:
    reflectance: np.ndarray   # [3, H, W] in [0, 1]
    illumination: np.ndarray  # [1, H, W] in (0, 1]

    def __post_init__(self) -> None:
        r, l = self.reflectance, self.illumination
        if r.ndim != 3 or r.shape[0] != 3:
            raise ShapeError(f"reflectance must be [3,H,W], got {r.shape}")
        if l.ndim != 3 or l.shape[0] != 1 or l.shape[1:] != r.shape[1:]:
            raise ShapeError(f"illumination must be [1,{r.shape[1]},{r.shape[2]}], "
                             f"got {l.shape}")
        if l.min() <= 0.0:
            raise ValueError("illumination must be strictly positive")


def reconstruct(pair: RetinexPair) -> ImageRGB:
    """Per-channel product R * L, clamped to [0, 1]."""
    return ImageRGB(np.clip(pair.reflectance * pair.illumination, 0.0, 1.0))


def decompose_maxchannel(image: ImageRGB, delta: float = 1e-4) -> RetinexPair:
    """L = max over channels + delta (capped at 1), R = I / L."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    illum = np.minimum(image.pixels.max(axis=0, keepdims=True) + delta, 1.0)
    refl = np.clip(image.pixels / illum, 0.0, 1.0)
    return RetinexPair(reflectance=refl, illumination=illum)


def darken(image: ImageRGB, gamma: float, gain: float,
           noise: np.ndarray | None = None) -> ImageRGB:
    """Synthetic low-light degradation: clamp(gain * I^gamma + noise)."""
    if gamma < 1:
        raise ValueError(f"gamma must be at least 1, got {gamma}")
    if not 0 < gain <= 1:
        raise ValueError(f"gain must lie in (0, 1], got {gain}")
    out = gain * image.pixels ** gamma
    if noise is not None:
        out = out + noise
    return ImageRGB(np.clip(out, 0.0, 1.0))


def make_toy_pair(rng: np.random.Generator, size: int, gamma: float = 2.0,
                  gain: float = 0.25, noise_std: float = 0.04
                  ) -> tuple[ImageRGB, ImageRGB]:
    """(I_low, I_normal): a procedural texture and its darkened copy.

    The normal-light image mixes a couple of smooth color gradients with
    a handful of solid rectangles; the low-light image is
    clamp(gain * I^gamma + gaussian noise).
    """
    if size < 8:
        raise ValueError(f"size must be at least 8, got {size}")
    if gamma < 1:
        raise ValueError(f"gamma must be at least 1, got {gamma}")
    if not 0 < gain <= 1:
        raise ValueError(f"gain must lie in (0, 1], got {gain}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be nonnegative, got {noise_std}")

    span = np.arange(size) / (size - 1)
    yy, xx = span[:, None], span[None, :]

    img = np.zeros((3, size, size))
    for _ in range(2):
        dx, dy = rng.uniform(-1.0, 1.0, size=2)
        phase = rng.uniform(0.0, 1.0)
        color = rng.uniform(0.2, 1.0, size=3)
        field = dx * xx + dy * yy + phase
        lo, hi = field.min(), field.max()
        field = (field - lo) / (hi - lo + 1e-9)
        img += color[:, None, None] * field

    for _ in range(4):
        y0 = int(rng.integers(0, size - 2))
        x0 = int(rng.integers(0, size - 2))
        h = int(rng.integers(2, size // 2 + 1))
        w = int(rng.integers(2, size // 2 + 1))
        color = rng.uniform(0.0, 1.0, size=3)
        patch = img[:, y0:y0 + h, x0:x0 + w]
        img[:, y0:y0 + h, x0:x0 + w] = 0.4 * patch + 0.6 * color[:, None, None]

    lo, hi = img.min(), img.max()
    normal = ImageRGB(np.clip(0.05 + 0.9 * (img - lo) / (hi - lo + 1e-9), 0.0, 1.0))

    noise = rng.normal(0.0, noise_std, size=img.shape) if noise_std > 0 else None
    return darken(normal, gamma, gain, noise), normal
