"""One-step low-light image enhancement with conditional consistency
models over Retinex components, on a small self-contained autodiff core."""

from .config import (DataConfig, ModelConfig, PathsConfig, RunConfig,
                     apply_overrides, load_run_config)
from .errors import (CheckpointError, ConfigError, DataError, IOFailure,
                     RelightError, ShapeError)
from .images import ImageRGB, read_image, write_image
from .infer import EnhanceResult, one_step_enhance
from .metrics import mae, psnr, ssim
from .net import (DenoiserConfig, DenoiserModel, adagn, denoiser_forward,
                  fourier_time_embedding, unet_forward)
from .retinex import (RetinexPair, darken, decompose_maxchannel,
                      make_toy_pair, reconstruct)
from .sampling import (SamplerConfig, SeededRng, make_rng, sample_bimodal,
                       sample_index_pair, sample_log_uniform)
from .schedule import NoiseSchedule, add_noise, sigma_from_alphabar
from .tensor import (ParameterStore, Tensor, backward, concat_channels,
                     conv2d, group_norm, linear, load_arrays, save_arrays,
                     scale_shift_channels, silu, upsample_nearest2)
from .train import (AdamW, TrainConfig, TrainState, consistency_loss,
                    ema_mu, ema_update, euler_step, fixed_loss,
                    load_checkpoint, save_checkpoint, train_loop,
                    write_loss_csv)

__version__ = "0.1.0"
