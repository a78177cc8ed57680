"""The conditional denoiser f(x, sigma | I_low): a compact U-Net wrapped
in skip/output preconditioning, with the noise scale injected through
adaptive group normalization.

The preconditioning makes f(x, eps) = x an identity of the arithmetic,
independent of the weights; everything the network learns rides on the
residual branch. The output conv starts at zero so an untrained model is
exactly the skip path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .schedule import NoiseSchedule
from .tensor import (ParameterStore, Tensor, concat_channels, conv2d,
                     group_norm, linear, scale_shift_channels, silu,
                     upsample_nearest2)

# Frequency band for the sinusoidal features of ln(sigma). Log-spaced so
# the embedding resolves both ends of a range spanning ~4.6 decades.
FOURIER_FREQ_LO = 1.0 / 32.0
FOURIER_FREQ_HI = 4.0


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int
    out_channels: int
    base_width: int = 16
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    fourier_bands: int = 64
    groups: int = 8

    def __post_init__(self) -> None:
        if self.in_channels != self.out_channels + 3:
            raise ValueError(
                f"in_channels must be out_channels + 3 (3-channel condition), "
                f"got {self.in_channels} and {self.out_channels}")
        if self.base_width < 1 or self.base_width % self.groups != 0:
            raise ValueError(f"base_width {self.base_width} must be a positive "
                             f"multiple of groups {self.groups}")
        if not self.channel_multipliers or any(m < 1 for m in self.channel_multipliers):
            raise ValueError(f"channel_multipliers must be positive ints, "
                             f"got {self.channel_multipliers}")
        if self.fourier_bands < 1:
            raise ValueError(f"fourier_bands must be at least 1, "
                             f"got {self.fourier_bands}")
        object.__setattr__(self, "channel_multipliers",
                           tuple(int(m) for m in self.channel_multipliers))

    @property
    def n_levels(self) -> int:
        return len(self.channel_multipliers)

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.n_levels - 1)

    @property
    def time_dim(self) -> int:
        return 4 * self.base_width

    def widths(self) -> list[int]:
        return [self.base_width * m for m in self.channel_multipliers]

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels,
                "out_channels": self.out_channels,
                "base_width": self.base_width,
                "channel_multipliers": list(self.channel_multipliers),
                "fourier_bands": self.fourier_bands,
                "groups": self.groups}

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        return DenoiserConfig(in_channels=int(d["in_channels"]),
                              out_channels=int(d["out_channels"]),
                              base_width=int(d["base_width"]),
                              channel_multipliers=tuple(d["channel_multipliers"]),
                              fourier_bands=int(d["fourier_bands"]),
                              groups=int(d["groups"]))


def fourier_time_embedding(sigma: float, bands: int) -> Tensor:
    """sin/cos features of ln(sigma) over log-spaced frequencies."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if bands < 1:
        raise ValueError(f"bands must be at least 1, got {bands}")
    freqs = np.geomspace(FOURIER_FREQ_LO, FOURIER_FREQ_HI, bands)
    ang = 2.0 * np.pi * freqs * np.log(sigma)
    return Tensor(np.concatenate([np.sin(ang), np.cos(ang)]))


def adagn(h: Tensor, t_emb: Tensor, gamma_w: Tensor, gamma_b: Tensor,
          beta_w: Tensor, beta_b: Tensor, groups: int,
          eps: float = 1e-5) -> Tensor:
    """GN(h) * (1 + gamma(t_emb)) + beta(t_emb), per channel."""
    gamma = linear(t_emb, gamma_w, gamma_b)
    beta = linear(t_emb, beta_w, beta_b)
    return scale_shift_channels(group_norm(h, groups, eps), gamma, beta)


class DenoiserModel:
    """Config plus two parameter sets: theta and its EMA shadow."""

    def __init__(self, config: DenoiserConfig, params: ParameterStore,
                 ema_params: ParameterStore):
        if params.names() != ema_params.names():
            raise ValueError("params and ema_params must hold the same names")
        self.config = config
        self.params = params
        self.ema_params = ema_params
        self.forward_calls = 0

    @staticmethod
    def create(config: DenoiserConfig,
               rng: np.random.Generator | None = None) -> "DenoiserModel":
        """Fresh model; with rng None all parameters start at zero
        (a skeleton for checkpoint loading)."""
        params = _init_params(config, rng)
        return DenoiserModel(config, params, params.clone(requires_grad=False))


def _init_params(config: DenoiserConfig, rng: np.random.Generator | None
                 ) -> ParameterStore:
    store = ParameterStore()
    widths = config.widths()
    td = config.time_dim

    def conv(name: str, cout: int, cin: int, k: int, zero: bool = False) -> None:
        if zero or rng is None:
            w = np.zeros((cout, cin, k, k))
        else:
            w = rng.normal(0.0, 1.0, (cout, cin, k, k)) / np.sqrt(cin * k * k)
        store.add(f"{name}.w", w)
        store.add(f"{name}.b", np.zeros(cout))

    def fc(name: str, dout: int, din: int, zero: bool = False) -> None:
        if zero or rng is None:
            w = np.zeros((dout, din))
        else:
            w = rng.normal(0.0, 1.0, (dout, din)) / np.sqrt(din)
        store.add(f"{name}.w", w)
        store.add(f"{name}.b", np.zeros(dout))

    def block(name: str, width: int) -> None:
        conv(f"{name}.conv", width, width, 3)
        fc(f"{name}.gamma", width, td, zero=True)
        fc(f"{name}.beta", width, td, zero=True)

    fc("time.fc1", td, 2 * config.fourier_bands)
    fc("time.fc2", td, td)
    conv("stem", widths[0], config.in_channels, 3)
    # Two blocks per level: encoder and decoder sides get one each, and
    # the bottom level keeps its pair together as the bottleneck.
    for i, w in enumerate(widths):
        block(f"enc{i}.block0", w)
        if i + 1 < len(widths):
            conv(f"down{i}", widths[i + 1], w, 3)
        else:
            block(f"enc{i}.block1", w)
    for i in range(len(widths) - 2, -1, -1):
        conv(f"dec{i}.up", widths[i], widths[i + 1], 1)
        block(f"dec{i}.block0", widths[i])
    conv("out", config.out_channels, widths[0], 3, zero=True)
    return store


def unet_forward(store: ParameterStore, config: DenoiserConfig,
                 x: Tensor, sigma: float) -> Tensor:
    """Raw network F(x, sigma); x is [B, in_channels, H, W]."""
    B, C, H, W = x.data.shape
    if C != config.in_channels:
        raise ShapeError(f"network expects {config.in_channels} input channels, "
                         f"got {C}")
    f = config.downsample_factor
    if H % f or W % f:
        raise ShapeError(f"spatial size {H}x{W} must be divisible by {f}; "
                         f"pad to {-(-H // f) * f}x{-(-W // f) * f}")

    emb = fourier_time_embedding(sigma, config.fourier_bands)
    t = silu(linear(emb, store["time.fc1.w"], store["time.fc1.b"]))
    t = linear(t, store["time.fc2.w"], store["time.fc2.b"])

    def block(name: str, h: Tensor) -> Tensor:
        h = conv2d(h, store[f"{name}.conv.w"], store[f"{name}.conv.b"], padding=1)
        h = adagn(h, t, store[f"{name}.gamma.w"], store[f"{name}.gamma.b"],
                  store[f"{name}.beta.w"], store[f"{name}.beta.b"], config.groups)
        return silu(h)

    h = conv2d(x, store["stem.w"], store["stem.b"], padding=1)
    skips: list[Tensor] = []
    n = config.n_levels
    for i in range(n):
        h = block(f"enc{i}.block0", h)
        if i + 1 < n:
            skips.append(h)
            h = conv2d(h, store[f"down{i}.w"], store[f"down{i}.b"],
                       stride=2, padding=1)
        else:
            h = block(f"enc{i}.block1", h)
    for i in range(n - 2, -1, -1):
        h = upsample_nearest2(h)
        h = conv2d(h, store[f"dec{i}.up.w"], store[f"dec{i}.up.b"])
        h = h + skips[i]
        h = block(f"dec{i}.block0", h)
    return conv2d(h, store["out.w"], store["out.b"], padding=1)


def denoiser_forward(model: DenoiserModel, x_noisy: Tensor, sigma: float,
                     condition: Tensor, schedule: NoiseSchedule,
                     use_ema: bool = False) -> Tensor:
    """c_skip(sigma) * x + c_out(sigma) * F([condition, c_in(sigma) * x]).

    With use_ema the EMA parameters evaluate the network; they carry no
    gradient flags, so nothing is recorded and nothing can backpropagate
    into them.
    """
    cfg = model.config
    if x_noisy.data.ndim != 4 or x_noisy.data.shape[1] != cfg.out_channels:
        raise ShapeError(f"x_noisy must be [B,{cfg.out_channels},H,W], "
                         f"got {x_noisy.shape}")
    if condition.data.ndim != 4 or condition.data.shape[1] != 3:
        raise ShapeError(f"condition must be [B,3,H,W], got {condition.shape}")
    if condition.data.shape[2:] != x_noisy.data.shape[2:] \
            or condition.data.shape[0] != x_noisy.data.shape[0]:
        raise ShapeError(f"condition {condition.shape} does not match "
                         f"x_noisy {x_noisy.shape}")

    c_skip, c_out, c_in = schedule.precondition(sigma)
    store = model.ema_params if use_ema else model.params
    net_in = concat_channels(condition, x_noisy * c_in)
    f_out = unet_forward(store, cfg, net_in, sigma)
    model.forward_calls += 1
    return x_noisy * c_skip + f_out * c_out
