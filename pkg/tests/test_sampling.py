"""Seeded RNG streams, log-uniform and noise-emphasized bimodal draws,
and grid index pairs for the consistency objective.

Distribution checks use a hand-rolled one-sample KS statistic; the
closed-form CDFs are written out in the tests themselves.
"""

import numpy as np
import pytest

from relight.sampling import (RNG_ALGORITHM, SamplerConfig, SeededRng,
                              make_rng, sample_bimodal, sample_index_pair,
                              sample_log_uniform)
from relight.schedule import NoiseSchedule


def ks_distance(samples, cdf):
    s = np.sort(samples)
    n = s.size
    vals = cdf(s)
    upper = np.abs(np.arange(1, n + 1) / n - vals).max()
    lower = np.abs(vals - np.arange(0, n) / n).max()
    return max(upper, lower)


# -- rng construction ---------------------------------------------------------

def test_make_rng_is_philox():
    assert RNG_ALGORITHM == "philox"
    rng = make_rng(0)
    assert type(rng.bit_generator).__name__.lower() == "philox"


def test_make_rng_reproducible_and_stream_separated():
    a = make_rng(7, stream=2).standard_normal(8)
    b = make_rng(7, stream=2).standard_normal(8)
    c = make_rng(7, stream=3).standard_normal(8)
    d = make_rng(8, stream=2).standard_normal(8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_seeded_rng_value_object():
    srng = SeededRng(seed=5, stream=1)
    assert srng.algorithm == "philox"
    x = srng.generator().standard_normal(4)
    y = make_rng(5, 1).standard_normal(4)
    np.testing.assert_array_equal(x, y)


# -- log uniform --------------------------------------------------------------

def test_log_uniform_bounds_and_distribution():
    rng = make_rng(0)
    lo, hi = 0.002, 80.0
    draws = np.array([sample_log_uniform(rng, lo, hi) for _ in range(20000)])
    assert draws.min() >= lo and draws.max() <= hi
    span = np.log(hi / lo)
    d = ks_distance(draws, lambda s: np.log(s / lo) / span)
    assert d < 0.015


def test_log_uniform_rejects_bad_range():
    rng = make_rng(0)
    with pytest.raises(ValueError):
        sample_log_uniform(rng, 0.0, 1.0)
    with pytest.raises(ValueError):
        sample_log_uniform(rng, 2.0, 1.0)
    with pytest.raises(ValueError):
        sample_log_uniform(rng, 1.0, 1.0)


# -- bimodal sampler -----------------------------------------------------------

def test_sampler_config_validation():
    cfg = SamplerConfig()
    assert cfg.tau == 0.95 and cfg.p_large == 0.95 and cfg.k_max == 5
    with pytest.raises(ValueError):
        SamplerConfig(tau=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(p_large=-0.1)
    with pytest.raises(ValueError):
        SamplerConfig(k_max=0)


def test_bimodal_draws_in_range_and_concentrated():
    sched = NoiseSchedule()
    rng = make_rng(1)
    cfg = SamplerConfig()
    draws = np.array([sample_bimodal(rng, sched, cfg) for _ in range(20000)])
    assert draws.min() >= sched.sigma_min and draws.max() <= sched.sigma_max
    # mixture: p_large of mass on (tau*sigma_max, sigma_max), rest log-uniform
    frac_top = (draws >= cfg.tau * sched.sigma_max).mean()
    expected = cfg.p_large + (1 - cfg.p_large) * (
        np.log(sched.sigma_max / (cfg.tau * sched.sigma_max))
        / np.log(sched.sigma_max / sched.sigma_min))
    assert abs(frac_top - expected) < 0.01


def test_bimodal_with_p_large_zero_is_log_uniform():
    sched = NoiseSchedule()
    rng = make_rng(2)
    cfg = SamplerConfig(p_large=0.0)
    draws = np.array([sample_bimodal(rng, sched, cfg) for _ in range(20000)])
    span = np.log(sched.sigma_max / sched.sigma_min)
    d = ks_distance(draws, lambda s: np.log(s / sched.sigma_min) / span)
    assert d < 0.015


def test_bimodal_with_p_large_one_stays_in_top_band():
    sched = NoiseSchedule()
    rng = make_rng(3)
    cfg = SamplerConfig(p_large=1.0)
    draws = np.array([sample_bimodal(rng, sched, cfg) for _ in range(2000)])
    assert draws.min() >= cfg.tau * sched.sigma_max


# -- index pairs ----------------------------------------------------------------

def test_index_pair_bounds_and_gap():
    rng = make_rng(4)
    for _ in range(2000):
        lo, hi = sample_index_pair(rng, n_levels=10, k_max=5)
        assert 0 <= lo < hi < 10
        assert 1 <= hi - lo <= 5


def test_index_pair_forced_case():
    rng = make_rng(5)
    for _ in range(20):
        assert sample_index_pair(rng, n_levels=2, k_max=1) == (0, 1)


def test_index_pair_gap_marginal_uniform():
    rng = make_rng(6)
    gaps = np.array([hi - lo for lo, hi in
                     (sample_index_pair(rng, 10, 5) for _ in range(100_000))])
    for k in range(1, 6):
        assert abs((gaps == k).mean() - 0.2) < 0.01


def test_index_pair_rejects_small_level_count():
    rng = make_rng(7)
    with pytest.raises(ValueError):
        sample_index_pair(rng, n_levels=5, k_max=5)
