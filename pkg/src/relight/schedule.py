"""Noise-scale range, discrete level grid, preconditioning, SNR weight.

The boundary identity c_skip(eps) = 1, c_out(eps) = 0 is exact in floating
point because both coefficients are built from (sigma - eps); one-step
generation leans on that anchor, so it is structural here, not tuned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ShapeError
from .tensor import Tensor, _track


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    sigma_data: float = 0.5
    n_levels: int = 10
    rho: float = 7.0

    def __post_init__(self) -> None:
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(f"need 0 < sigma_min < sigma_max, "
                             f"got {self.sigma_min} and {self.sigma_max}")
        if self.sigma_data <= 0:
            raise ValueError(f"sigma_data must be positive, got {self.sigma_data}")
        if self.n_levels < 2:
            raise ValueError(f"n_levels must be at least 2, got {self.n_levels}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")

    @property
    def epsilon(self) -> float:
        """Boundary noise scale; identified with sigma_min."""
        return self.sigma_min

    def precondition(self, sigma: float) -> tuple[float, float, float]:
        """(c_skip, c_out, c_in) at the given noise scale."""
        eps, sd = self.epsilon, self.sigma_data
        if not eps <= sigma <= self.sigma_max:
            raise ValueError(f"sigma {sigma} outside [{eps}, {self.sigma_max}]")
        c_skip = sd * sd / ((sigma - eps) ** 2 + sd * sd)
        c_out = sd * (sigma - eps) / math.sqrt(sd * sd + sigma * sigma)
        c_in = 1.0 / math.sqrt(sigma * sigma + sd * sd)
        return c_skip, c_out, c_in

    def sigma_grid(self) -> list[float]:
        """Strictly decreasing levels from sigma_max to sigma_min."""
        n, rho = self.n_levels, self.rho
        hi = self.sigma_max ** (1.0 / rho)
        lo = self.sigma_min ** (1.0 / rho)
        return [(hi + (i / (n - 1)) * (lo - hi)) ** rho for i in range(n)]

    def sigma_at_level(self, level: int) -> float:
        """Noise scale by ascending level: 0 is quietest, n_levels-1 loudest."""
        if not 0 <= level < self.n_levels:
            raise ValueError(f"level {level} outside [0, {self.n_levels})")
        return self.sigma_grid()[self.n_levels - 1 - level]

    def snr_weight(self, sigma: float) -> float:
        """Loss weight (sigma_data/sigma)^2 / (1 + (sigma_data/sigma)^2)."""
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        r = (self.sigma_data / sigma) ** 2
        return r / (1.0 + r)


def add_noise(x0: Tensor, sigma: float, eps: Tensor) -> Tensor:
    """x0 + sigma * eps."""
    if x0.data.shape != eps.data.shape:
        raise ShapeError(f"add_noise: shapes {x0.shape} and {eps.shape} differ")
    s = float(sigma)
    return _track(x0.data + s * eps.data, (x0, eps),
                  lambda g: (g, g * s))


def sigma_from_alphabar(alphabar: float) -> float:
    """Variance-preserving alpha-bar mapped to a noise scale."""
    if not 0 < alphabar <= 1:
        raise ValueError(f"alphabar must lie in (0, 1], got {alphabar}")
    return math.sqrt((1.0 - alphabar) / alphabar)
