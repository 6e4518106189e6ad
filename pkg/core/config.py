"""
Run configuration: a validated pydantic model read from flat key=value files.
"""
import os
from pathlib import Path
from typing import Dict, Iterable, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator

from .error_recycling import CHANNELS, InjectionConfig
from .errors import ConfigError
from .flow_matching import TimestepSchedule
from .synth_data import ClipSpec, ReferenceMode
from .velocity_net import NetDims

OUTPUT_ROOT_ENV = "ERFT_OUTPUT_ROOT"

_CHANNEL_KEYS = {
    "img": "image_error_p",
    "vid": "latent_error_p",
    "noi": "noise_error_p",
}

# short symbol names accepted in files and flags
KEY_ALIASES = {
    "p_vid": "latent_error_p",
    "p_img": "image_error_p",
    "p_noi": "noise_error_p",
    "p_clean": "clean_input_p",
    "z": "max_errors_per_grid",
    "n_test": "timestep_grids",
    "n_train": "train_timesteps",
    "lr": "learning_rate",
}


def default_output_root() -> str:
    return os.getenv(OUTPUT_ROOT_ENV, "runs")


class RunConfig(BaseModel):
    """Every hyperparameter of a run; keys double as config-file keys."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # error recycling
    noise_error_p: float = Field(0.01, ge=0.0, le=1.0)
    latent_error_p: float = Field(0.9, ge=0.0, le=1.0)
    image_error_p: float = Field(0.9, ge=0.0, le=1.0)
    clean_input_p: float = Field(0.5, ge=0.0, le=1.0)
    max_errors_per_grid: int = Field(500, ge=1)
    timestep_grids: int = Field(50, ge=1)
    train_timesteps: int = Field(1000, ge=2)
    warmup_iterations: int = Field(20, ge=0)
    num_workers: int = Field(4, ge=1)

    # optimization
    learning_rate: float = Field(1e-3, ge=0.0)
    steps: int = Field(5000, ge=0)
    batch_size: int = Field(8, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"

    # data and network
    frames: int = Field(8, ge=2)
    dim: int = Field(8, ge=2)
    angle: float = Field(0.2, allow_inf_nan=False)
    data_noise: float = Field(0.01, ge=0.0, allow_inf_nan=False)
    cond_dim: int = Field(0, ge=0)
    hidden_layers: int = Field(2, ge=0)
    width: int = Field(64, ge=1)

    # conditioning (must follow frames)
    motion_frames: int = Field(5, ge=1)
    motion_probability: float = Field(0.95, ge=0.0, le=1.0)
    reference_mode: ReferenceMode = ReferenceMode.LAST_FRAME

    seed: int = Field(0, ge=0)
    output_dir: str = Field(default_factory=default_output_root)
    run_id: Optional[str] = None

    @field_validator("dim")
    @classmethod
    def _dim_even(cls, value: int) -> int:
        if value % 2:
            raise ValueError("dim must be even")
        return value

    @field_validator("run_id", mode="before")
    @classmethod
    def _blank_run_id(cls, value):
        if isinstance(value, str) and not value.strip():
            return None
        return value

    @field_validator("motion_frames")
    @classmethod
    def _motion_fits_clip(cls, value: int, info: ValidationInfo) -> int:
        frames = info.data.get("frames")
        if frames is not None and value > frames:
            raise ValueError(f"motion_frames must not exceed frames ({frames})")
        return value

    def clip_spec(self) -> ClipSpec:
        return ClipSpec(frames=self.frames, dim=self.dim, angle=self.angle, data_noise=self.data_noise)

    def schedule(self) -> TimestepSchedule:
        return TimestepSchedule(n_train=self.train_timesteps, n_test=self.timestep_grids)

    def net_dims(self) -> NetDims:
        return NetDims(
            frames=self.frames,
            dim=self.dim,
            cond_dim=self.cond_dim,
            hidden_layers=self.hidden_layers,
            width=self.width,
        )

    def injection_config(self) -> InjectionConfig:
        return InjectionConfig(
            p_vid=self.latent_error_p,
            p_img=self.image_error_p,
            p_noi=self.noise_error_p,
            p_clean=self.clean_input_p,
        )

    def without_channels(self, channels: Iterable[str]) -> "RunConfig":
        """Copy with the named error channels' injection probabilities forced to 0."""
        updates = {}
        for channel in channels:
            if channel not in CHANNELS:
                raise ConfigError("drop", f"unknown error channel {channel!r}")
            updates[_CHANNEL_KEYS[channel]] = 0.0
        return self.model_copy(update=updates)


def read_key_values(path: Union[str, Path]) -> Dict[str, str]:
    """
    Parse a flat key=value file; blank lines and ``#`` comments are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    values: Dict[str, str] = {}
    for number, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {number}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Resolve a run configuration.

    Args:
        path: Optional key=value file
        overrides: Flag values, applied over the file

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: naming the unknown, missing or out-of-range key
    """
    raw: Dict[str, str] = read_key_values(path) if path is not None else {}
    raw.update(overrides or {})
    values: Dict[str, str] = {}
    written_as: Dict[str, str] = {}
    for key, value in raw.items():
        canonical = KEY_ALIASES.get(key.lower(), key)
        if canonical not in RunConfig.model_fields:
            raise ConfigError(key, "unknown key")
        values[canonical] = value
        written_as[canonical] = key
    try:
        return RunConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        field = str(error["loc"][0]) if error["loc"] else "config"
        raise ConfigError(written_as.get(field, field), error["msg"]) from e


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    """Turn ``["key=value", ...]`` flag values into a dict."""
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(pair, "override must look like key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def dump_config(config: RunConfig) -> str:
    """Resolved configuration as key=value text, reloadable by parse_config."""
    lines = [
        f"{key}={value}"
        for key, value in config.model_dump(mode="json").items()
        if value is not None
    ]
    return "\n".join(lines) + "\n"
