"""Run configuration: one INI-style file covering every module.

Each section maps onto one config dataclass; every key has a default
equal to the dataclass default, unknown sections or keys are hard
errors, and the fully resolved result can be echoed back out as a run
manifest so a run is reproducible from its output directory alone.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .net import DenoiserConfig
from .sampling import SamplerConfig
from .schedule import NoiseSchedule
from .train import TrainConfig


@dataclass(frozen=True)
class ModelConfig:
    """Backbone hyperparameters shared by both component models."""
    base_width: int = 16
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    fourier_bands: int = 64
    groups: int = 8

    def denoiser_config(self, component: str) -> DenoiserConfig:
        if component not in ("R", "L"):
            raise ValueError(f"component must be 'R' or 'L', got {component!r}")
        out_ch = 3 if component == "R" else 1
        return DenoiserConfig(in_channels=out_ch + 3, out_channels=out_ch,
                              base_width=self.base_width,
                              channel_multipliers=self.channel_multipliers,
                              fourier_bands=self.fourier_bands,
                              groups=self.groups)


@dataclass(frozen=True)
class DataConfig:
    """Toy dataset generation parameters."""
    count: int = 64
    size: int = 32
    gamma: float = 2.0
    gain: float = 0.25
    noise_std: float = 0.04

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError(f"count must be at least 1, got {self.count}")
        if self.size < 8:
            raise ValueError(f"size must be at least 8, got {self.size}")


@dataclass(frozen=True)
class PathsConfig:
    dataset_dir: str = "data"
    out_dir: str = "out"
    checkpoint: str = ""  # empty means <out_dir>/checkpoint_final.bin
    enhanced_suffix: str = "_enhanced"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    use_ema: bool = True
    schedule: NoiseSchedule = NoiseSchedule()
    sampler: SamplerConfig = SamplerConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    paths: PathsConfig = PathsConfig()

    def checkpoint_path(self) -> Path:
        if self.paths.checkpoint:
            return Path(self.paths.checkpoint)
        return Path(self.paths.out_dir) / "checkpoint_final.bin"


# Section name -> (RunConfig attribute, dataclass). The [run] section maps
# onto RunConfig's own scalar fields.
_SECTIONS = {
    "run": (None, None),
    "schedule": ("schedule", NoiseSchedule),
    "sampler": ("sampler", SamplerConfig),
    "model": ("model", ModelConfig),
    "train": ("train", TrainConfig),
    "data": ("data", DataConfig),
    "paths": ("paths", PathsConfig),
}
_RUN_FIELDS = {"seed": 0, "use_ema": True}


def _section_defaults(section: str) -> dict:
    if section == "run":
        return dict(_RUN_FIELDS)
    _, cls = _SECTIONS[section]
    return {f.name: f.default for f in dataclasses.fields(cls)}


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _coerce(section: str, key: str, raw: str, default) -> object:
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(part) for part in raw.split(","))
        return raw.strip()
    except ValueError as exc:
        kind = type(default).__name__
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} "
                          f"as {kind}") from exc


def load_run_config(path: str | None = None) -> RunConfig:
    """Defaults overlaid with an optional INI file; strict about keys."""
    values = {sec: _section_defaults(sec) for sec in _SECTIONS}

    if path is not None:
        file_path = Path(path)
        if not file_path.is_file():
            raise ConfigError(f"config file not found: {file_path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                           interpolation=None)
        try:
            with open(file_path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot parse config {file_path}: {exc}") from exc
        if parser.defaults():
            raise ConfigError("a [DEFAULT] section is not supported")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            known = values[section]
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                known[key] = _coerce(section, key, raw, _section_defaults(section)[key])

    try:
        return RunConfig(
            seed=values["run"]["seed"],
            use_ema=values["run"]["use_ema"],
            schedule=NoiseSchedule(**values["schedule"]),
            sampler=SamplerConfig(**values["sampler"]),
            model=ModelConfig(**values["model"]),
            train=TrainConfig(**values["train"]),
            data=DataConfig(**values["data"]),
            paths=PathsConfig(**values["paths"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(config: RunConfig, seed: int | None = None,
                    out_dir: str | None = None, iterations: int | None = None,
                    no_fixed_loss: bool = False, no_noise_emphasis: bool = False,
                    use_ema: bool | None = None) -> RunConfig:
    """CLI flags folded into the config; returns a new RunConfig."""
    train = config.train
    if iterations is not None:
        if iterations < 0:
            raise ConfigError(f"--iterations must be nonnegative, got {iterations}")
        train = dataclasses.replace(train, iterations=iterations)
    if no_fixed_loss:
        train = dataclasses.replace(train, lambda_fixed=0.0)
    if no_noise_emphasis:
        train = dataclasses.replace(train, noise_emphasis=False)
    paths = config.paths
    if out_dir is not None:
        paths = dataclasses.replace(paths, out_dir=out_dir)
    return dataclasses.replace(
        config,
        seed=config.seed if seed is None else seed,
        use_ema=config.use_ema if use_ema is None else use_ema,
        train=train,
        paths=paths,
    )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def manifest_text(config: RunConfig, command: str) -> str:
    """The fully resolved configuration as INI text."""
    lines = [f"# relight run manifest (command: {command})"]
    for section in _SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        if section == "run":
            source = {"seed": config.seed, "use_ema": config.use_ema}
        else:
            attr, _ = _SECTIONS[section]
            source = dataclasses.asdict(getattr(config, attr))
        for key, value in source.items():
            lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def write_manifest(path, config: RunConfig, command: str) -> None:
    Path(path).write_text(manifest_text(config, command), encoding="utf-8")
