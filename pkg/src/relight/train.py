"""Dual-objective training: temporal consistency against an EMA target
network plus direct regression to ground-truth components.

Per step, one noise-level pair from the discrete grid drives the
consistency term (adjacent state built by an Euler move along the
denoising direction), and one continuously sampled, high-noise-biased
scale drives the ground-truth term. Both component models (reflectance
and illumination) share the draws and train side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DataError
from .images import ImageRGB
from .net import DenoiserConfig, DenoiserModel, denoiser_forward
from .retinex import decompose_maxchannel
from .sampling import SamplerConfig, sample_bimodal, sample_index_pair
from .schedule import NoiseSchedule, add_noise
from .tensor import ParameterStore, Tensor, backward, load_arrays, save_arrays

COMPONENTS = ("R", "L")


@dataclass(frozen=True)
class TrainConfig:
    lambda_consist: float = 1.0
    lambda_fixed: float = 0.3
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    iterations: int = 2000
    batch_size: int = 4
    patch_size: int = 32
    flip_prob: float = 0.5
    noise_emphasis: bool = True
    checkpoint_every: int = 500

    def __post_init__(self) -> None:
        if self.lambda_consist < 0 or self.lambda_fixed < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.iterations < 0 or self.batch_size < 1 or self.patch_size < 1:
            raise ValueError("iterations must be >= 0, batch_size and "
                             "patch_size must be >= 1")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass
class TrainState:
    step: int = 0
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    optimizers: dict = field(default_factory=dict)


def euler_step(x_high: Tensor, sigma_high: float, sigma_low: float,
               x0_target: Tensor) -> Tensor:
    """Move x from sigma_high toward sigma_low along (x - x0)/sigma."""
    if sigma_high <= 0:
        raise ValueError(f"sigma_high must be positive, got {sigma_high}")
    if sigma_low > sigma_high:
        raise ValueError(f"sigma_low ({sigma_low}) must not exceed "
                         f"sigma_high ({sigma_high})")
    c = (sigma_low - sigma_high) / sigma_high
    return x_high + (x_high - x0_target) * c


def consistency_loss(model: DenoiserModel, x0: Tensor, condition: Tensor,
                     schedule: NoiseSchedule, sampler: SamplerConfig,
                     rng: np.random.Generator) -> Tensor:
    """w(sigma_low) * ||f(x_low) - stopgrad(f_ema(x_high))||^2, one grid
    pair per call, shared across the batch."""
    n_low, n_high = sample_index_pair(rng, schedule.n_levels, sampler.k_max)
    s_low = schedule.sigma_at_level(n_low)
    s_high = schedule.sigma_at_level(n_high)
    eps = Tensor(rng.standard_normal(x0.data.shape))
    x_high = add_noise(x0, s_high, eps)
    # EMA params are gradient-free, so the target and the Euler state
    # never enter the graph: the stop-gradient is structural.
    x0_target = denoiser_forward(model, x_high, s_high, condition,
                                 schedule, use_ema=True)
    x_low = euler_step(x_high, s_high, s_low, x0_target)
    pred = denoiser_forward(model, x_low, s_low, condition, schedule)
    diff = pred - x0_target
    return (diff * diff).mean() * schedule.snr_weight(s_low)


def fixed_loss(model: DenoiserModel, x0: Tensor, condition: Tensor,
               schedule: NoiseSchedule, sampler: SamplerConfig,
               rng: np.random.Generator) -> Tensor:
    """||f(x0 + sigma*eps) - x0||^2 at a bimodally drawn sigma."""
    sigma = sample_bimodal(rng, schedule, sampler)
    eps = Tensor(rng.standard_normal(x0.data.shape))
    x_noisy = add_noise(x0, sigma, eps)
    pred = denoiser_forward(model, x_noisy, sigma, condition, schedule)
    diff = pred - x0
    return (diff * diff).mean()


def ema_mu(k: int) -> float:
    """min(0.9999, (1+k)/(10+k))."""
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    return min(0.9999, (1.0 + k) / (10.0 + k))


def ema_update(model: DenoiserModel, mu: float) -> None:
    """theta_ema <- mu * theta_ema + (1 - mu) * theta, in place."""
    if not 0 <= mu <= 1:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    for name, target in model.ema_params.items():
        _kernels.ema_step(target.data.ravel(), model.params[name].data.ravel(), mu)


class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, store: ParameterStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, weight_decay: float = 0.01,
                 eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            _kernels.adamw_step(p.data.ravel(), np.ascontiguousarray(g).ravel(),
                                self.m[name].ravel(), self.v[name].ravel(),
                                self.lr, self.beta1, self.beta2, bc1, bc2,
                                self.weight_decay, self.eps)

    def zero_grad(self) -> None:
        self.store.zero_grad()


def _crop_batch(dataset: list[tuple[ImageRGB, ImageRGB]], config: TrainConfig,
                rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
    """Aligned random patches; returns (x0_R, x0_L, condition) tensors."""
    p = config.patch_size
    idx = rng.integers(0, len(dataset), size=config.batch_size)
    refl, illum, cond = [], [], []
    for i in idx:
        low, normal = dataset[int(i)]
        y0 = int(rng.integers(0, low.height - p + 1))
        x0 = int(rng.integers(0, low.width - p + 1))
        flip = rng.random() < config.flip_prob
        low_patch = low.pixels[:, y0:y0 + p, x0:x0 + p]
        normal_patch = normal.pixels[:, y0:y0 + p, x0:x0 + p]
        if flip:
            low_patch = low_patch[:, :, ::-1]
            normal_patch = normal_patch[:, :, ::-1]
        pair = decompose_maxchannel(ImageRGB(np.ascontiguousarray(normal_patch)))
        refl.append(pair.reflectance)
        illum.append(pair.illumination)
        cond.append(np.ascontiguousarray(low_patch))
    return (Tensor(np.stack(refl)), Tensor(np.stack(illum)),
            Tensor(np.stack(cond)))


def _check_dataset(dataset: list[tuple[ImageRGB, ImageRGB]],
                   config: TrainConfig, models: dict) -> None:
    if not dataset:
        raise DataError("training dataset is empty")
    p = config.patch_size
    for low, normal in dataset:
        if (low.height, low.width) != (normal.height, normal.width):
            raise DataError(f"pair size mismatch: low {low.height}x{low.width} "
                            f"vs normal {normal.height}x{normal.width}")
        if low.height < p or low.width < p:
            raise DataError(f"image {low.height}x{low.width} smaller than "
                            f"patch size {p}")
    for comp, model in models.items():
        f = model.config.downsample_factor
        if p % f:
            raise DataError(f"patch size {p} not divisible by the "
                            f"downsampling factor {f} of model {comp}")


def train_loop(models: dict[str, DenoiserModel],
               dataset: list[tuple[ImageRGB, ImageRGB]],
               schedule: NoiseSchedule, sampler: SamplerConfig,
               config: TrainConfig, rng: np.random.Generator,
               checkpoint_dir=None, meta: dict | None = None) -> TrainState:
    """Run the dual-objective loop over both component models.

    Checkpoints are written into checkpoint_dir (when given) every
    `checkpoint_every` steps and always after the final step.
    """
    if set(models) != set(COMPONENTS):
        raise ValueError(f"models must have keys {COMPONENTS}, got {set(models)}")
    _check_dataset(dataset, config, models)

    fixed_sampler = sampler if config.noise_emphasis else \
        SamplerConfig(tau=sampler.tau, p_large=0.0, k_max=sampler.k_max)
    state = TrainState()
    state.optimizers = {
        comp: AdamW(models[comp].params, lr=config.learning_rate,
                    beta1=config.beta1, beta2=config.beta2,
                    weight_decay=config.weight_decay)
        for comp in COMPONENTS}
    null_objective = config.lambda_consist == 0 and config.lambda_fixed == 0

    for it in range(config.iterations):
        x0_r, x0_l, cond = _crop_batch(dataset, config, rng)
        component_x0 = {"R": x0_r, "L": x0_l}

        if null_objective:
            state.step = it + 1
            state.history.append((it + 1, 0.0, 0.0, 0.0))
            continue

        loss_c = None
        if config.lambda_consist > 0:
            for comp in COMPONENTS:
                term = consistency_loss(models[comp], component_x0[comp],
                                        cond, schedule, sampler, rng)
                loss_c = term if loss_c is None else loss_c + term
        loss_f = None
        if config.lambda_fixed > 0:
            for comp in COMPONENTS:
                term = fixed_loss(models[comp], component_x0[comp],
                                  cond, schedule, fixed_sampler, rng)
                loss_f = term if loss_f is None else loss_f + term

        if loss_c is not None and loss_f is not None:
            total = loss_c * config.lambda_consist + loss_f * config.lambda_fixed
        elif loss_c is not None:
            total = loss_c * config.lambda_consist
        else:
            total = loss_f * config.lambda_fixed
        backward(total)

        for comp in COMPONENTS:
            state.optimizers[comp].step()
            state.optimizers[comp].zero_grad()
            ema_update(models[comp], ema_mu(it))

        state.step = it + 1
        state.history.append((it + 1,
                              loss_c.item() if loss_c is not None else 0.0,
                              loss_f.item() if loss_f is not None else 0.0,
                              total.item()))

        if checkpoint_dir is not None and (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint_{it + 1:06d}.bin",
                            models, step=it + 1, extra=meta)

    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "checkpoint_final.bin",
                        models, step=state.step, extra=meta)
    return state


# -- persistence -------------------------------------------------------------


def save_checkpoint(path, models: dict[str, DenoiserModel], step: int,
                    extra: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for comp, model in models.items():
        for name, t in model.params.items():
            arrays[f"{comp}.params.{name}"] = t.data
        for name, t in model.ema_params.items():
            arrays[f"{comp}.ema.{name}"] = t.data
    meta = {"step": step,
            "configs": {comp: m.config.to_dict() for comp, m in models.items()}}
    if extra:
        meta.update(extra)
    save_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[dict[str, DenoiserModel], dict]:
    from .errors import CheckpointError

    arrays, meta = load_arrays(path)
    if "configs" not in meta:
        raise CheckpointError(f"checkpoint {path} lacks model configs")
    models: dict[str, DenoiserModel] = {}
    for comp, cfg_dict in meta["configs"].items():
        cfg = DenoiserConfig.from_dict(cfg_dict)
        model = DenoiserModel.create(cfg, rng=None)
        prefix_p = f"{comp}.params."
        prefix_e = f"{comp}.ema."
        model.params.load_state({k[len(prefix_p):]: v for k, v in arrays.items()
                                 if k.startswith(prefix_p)})
        model.ema_params.load_state({k[len(prefix_e):]: v for k, v in arrays.items()
                                     if k.startswith(prefix_e)})
        models[comp] = model
    return models, meta


def write_loss_csv(path, history: list[tuple[int, float, float, float]]) -> None:
    lines = ["step,loss_consist,loss_fixed,loss_total"]
    for step, lc, lf, lt in history:
        lines.append(f"{step},{lc!r},{lf!r},{lt!r}")
    Path(path).write_text("\n".join(lines) + "\n")
