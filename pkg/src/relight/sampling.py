"""Stochastic draws: log-uniform noise scales, the noise-emphasized
bimodal mixture, and grid index pairs for the consistency loss.

All randomness flows through numpy Philox generators created by
`make_rng`; identical (seed, stream) pairs give identical sequences on
any platform, which the determinism guarantees of the CLI rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

RNG_ALGORITHM = "philox"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; distinct streams are independent."""
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class SeededRng:
    """Reproducible RNG handle: algorithm name plus 64-bit seed."""
    seed: int
    stream: int = 0
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self) -> None:
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unsupported rng algorithm: {self.algorithm!r}")

    def generator(self) -> np.random.Generator:
        return make_rng(self.seed, self.stream)


@dataclass(frozen=True)
class SamplerConfig:
    tau: float = 0.95
    p_large: float = 0.95
    k_max: int = 5

    def __post_init__(self) -> None:
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0 <= self.p_large <= 1:
            raise ValueError(f"p_large must lie in [0, 1], got {self.p_large}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be at least 1, got {self.k_max}")


def sample_log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    """exp(U) for U uniform on [ln lo, ln hi]."""
    if lo <= 0 or lo >= hi:
        raise ValueError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def sample_bimodal(rng: np.random.Generator, schedule: NoiseSchedule,
                   config: SamplerConfig) -> float:
    """With probability p_large draw from the top band [tau*sigma_max,
    sigma_max], otherwise from the full range. Both branches log-uniform."""
    if rng.random() < config.p_large:
        return sample_log_uniform(rng, config.tau * schedule.sigma_max,
                                  schedule.sigma_max)
    return sample_log_uniform(rng, schedule.sigma_min, schedule.sigma_max)


def sample_index_pair(rng: np.random.Generator, n_levels: int,
                      k_max: int) -> tuple[int, int]:
    """Adjacent grid levels (n_low, n_high) with gap uniform on {1..k_max}.

    Levels count upward in noise, so n_high carries more noise than n_low.
    """
    if n_levels <= k_max:
        raise ValueError(f"n_levels ({n_levels}) must exceed k_max ({k_max})")
    k = int(rng.integers(1, k_max + 1))
    n_low = int(rng.integers(0, n_levels - k))
    return n_low, n_low + k
