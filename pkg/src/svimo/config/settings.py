"""Run configuration: YAML file -> validated pydantic models, with env and CLI overrides."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from svimo.errors import ConfigError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ShapeConfig(_Section):
    """Video geometry, compression ratios and transformer width."""

    N: int = Field(9, ge=1, description="Frames per clip")
    H: int = Field(32, ge=1)
    W: int = Field(48, ge=1)
    rh: int = Field(4, ge=1)
    rw: int = Field(4, ge=1)
    rn: int = Field(2, ge=1)
    patch: int = Field(2, ge=1)
    L_text: int = Field(12, ge=0, description="Max text tokens")
    d_model: int = Field(128, ge=1)
    d_latent: Optional[int] = Field(
        None, ge=1, description="Latent channels; derived in lossless codec mode"
    )

    @model_validator(mode="after")
    def _check_divisibility(self) -> "ShapeConfig":
        if self.H % (self.rh * self.patch):
            raise ValueError(f"H={self.H} not divisible by rh*patch={self.rh * self.patch}")
        if self.W % (self.rw * self.patch):
            raise ValueError(f"W={self.W} not divisible by rw*patch={self.rw * self.patch}")
        if (self.N - 1) % self.rn:
            raise ValueError(f"N-1={self.N - 1} not divisible by rn={self.rn}")
        return self

    @property
    def latent_frames(self) -> int:
        return (self.N - 1) // self.rn + 1

    @property
    def latent_hw(self) -> Tuple[int, int]:
        return self.H // self.rh, self.W // self.rw

    @property
    def lossless_channels(self) -> int:
        return self.rn * self.rh * self.rw * 3


class ScheduleConfig(_Section):
    T: int = Field(1000, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(2e-2, gt=0, lt=1)
    kind: Literal["linear", "cosine"] = "linear"
    inference_steps: int = Field(50, ge=1)

    @model_validator(mode="after")
    def _check_order(self) -> "ScheduleConfig":
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must be <= beta_end")
        if self.inference_steps > self.T:
            raise ValueError(f"inference_steps={self.inference_steps} exceeds T={self.T}")
        return self


class CodecConfig(_Section):
    kind: Literal["lossless", "learned"] = "lossless"
    image_noise_sigma: float = Field(0.02, ge=0)
    learned_hidden: int = Field(32, ge=1)
    learned_steps: int = Field(2000, ge=1)
    learned_target_mse: float = Field(1e-3, gt=0)


class ModelConfig(_Section):
    n_blocks: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    ff_mult: int = Field(4, ge=1)
    norm_eps: float = Field(1e-6, gt=0)
    d_time: int = Field(128, ge=2)
    attention: Literal["full", "modality_local"] = "full"
    vid_d: int = Field(128, ge=1)
    vid_blocks: int = Field(2, ge=1)
    vid_heads: int = Field(4, ge=1)
    vid_conv_channels: int = Field(32, ge=1)

    @model_validator(mode="after")
    def _check_heads(self) -> "ModelConfig":
        if self.vid_d % self.vid_heads:
            raise ValueError(f"vid_d={self.vid_d} not divisible by vid_heads={self.vid_heads}")
        return self


FeedbackMode = Literal["full", "guidance_only", "gradient_only", "none"]


class TrainConfig(_Section):
    omega1: float = Field(1.0, ge=0)
    omega2: float = Field(0.05, ge=0)
    warmup_steps: int = Field(500, ge=0)
    total_steps: int = Field(2000, ge=0)
    batch_size: int = Field(4, ge=1)
    learning_rate: float = Field(1e-4, ge=0)
    lr_warmup_steps: int = Field(100, ge=0)
    feedback_mode: FeedbackMode = "full"
    checkpoint_every: int = Field(500, ge=1)
    seed: Optional[int] = Field(None, description="Defaults to the run seed")

    @property
    def uses_guidance(self) -> bool:
        return self.feedback_mode in ("full", "guidance_only")

    @property
    def uses_gradient_constraint(self) -> bool:
        return self.feedback_mode in ("full", "gradient_only")


class DataConfig(_Section):
    num_samples: int = Field(8, ge=1)
    split_ratio: float = Field(0.75, gt=0, lt=1)
    J: int = Field(12, ge=2, description="Hand joints, both hands")
    K: int = Field(32, ge=2, description="Object points, tool then target")
    fps: float = Field(8.0, gt=0)
    actions: List[str] = Field(default_factory=lambda: ["stir", "push", "lift", "rotate", "brush"])
    bounds_lo: Tuple[float, float, float] = (-1.5, -1.0, -1.0)
    bounds_hi: Tuple[float, float, float] = (1.5, 1.0, 1.0)

    @model_validator(mode="after")
    def _check_even(self) -> "DataConfig":
        if self.J % 2:
            raise ValueError(f"J={self.J} must be even (two hands)")
        if self.K % 2:
            raise ValueError(f"K={self.K} must be even (tool/target halves)")
        known = {"stir", "push", "lift", "rotate", "brush"}
        unknown = set(self.actions) - known
        if unknown or not self.actions:
            raise ValueError(f"actions must be a non-empty subset of {sorted(known)}")
        return self


class MetricsConfig(_Section):
    tau_op: float = Field(1.0, ge=0, description="Dynamic-degree flow threshold (pixels)")
    mask_threshold: float = Field(0.1, gt=0)
    ae_bottleneck: int = Field(64, ge=1)
    ae_hidden: int = Field(256, ge=1)
    ae_max_steps: int = Field(3000, ge=1)
    ae_lr: float = Field(1e-3, gt=0)
    ae_target_mse: float = Field(1e-2, gt=0)


class PathsConfig(_Section):
    runs_dir: str = "runs"


class RunConfig(_Section):
    format_version: Literal[1] = FORMAT_VERSION
    seed: int = 0
    shapes: ShapeConfig = ShapeConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    codec: CodecConfig = CodecConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    metrics: MetricsConfig = MetricsConfig()
    paths: PathsConfig = PathsConfig()

    @model_validator(mode="after")
    def _check_cross(self) -> "RunConfig":
        if self.shapes.d_model % self.model.heads:
            raise ValueError(
                f"d_model={self.shapes.d_model} not divisible by heads={self.model.heads}"
            )
        if self.codec.kind == "lossless" and self.shapes.d_latent not in (
            None,
            self.shapes.lossless_channels,
        ):
            raise ValueError(
                f"lossless codec needs d_latent={self.shapes.lossless_channels}, "
                f"got {self.shapes.d_latent}"
            )
        return self

    @property
    def latent_channels(self) -> int:
        if self.codec.kind == "lossless":
            return self.shapes.lossless_channels
        return self.shapes.d_latent or 16

    @property
    def train_seed(self) -> int:
        return self.seed if self.train.seed is None else self.train.seed


class EnvSettings(BaseSettings):
    """Environment overrides (``SVIMO_*``), read from the process env and ``.env``."""

    model_config = SettingsConfigDict(env_prefix="SVIMO_", env_file=".env", extra="ignore")

    seed: Optional[int] = None
    log_level: str = "INFO"


def _set_dotted(raw: Dict[str, Any], dotted: str, value: Any) -> None:
    node = raw
    *parents, leaf = dotted.split(".")
    for key in parents:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot override '{dotted}': '{key}' is not a section")
        node = child
    node[leaf] = value


def parse_override(item: str) -> Tuple[str, Any]:
    """``'train.total_steps=10'`` -> ``('train.total_steps', 10)`` (value parsed as YAML)."""
    if "=" not in item:
        raise ConfigError(f"Override must look like key.path=value, got '{item}'")
    key, text = item.split("=", 1)
    return key.strip(), yaml.safe_load(text)


def build_config(
    raw: Optional[Dict[str, Any]] = None,
    overrides: Sequence[str] = (),
    env: Optional[EnvSettings] = None,
) -> RunConfig:
    raw = dict(raw or {})
    for item in overrides:
        key, value = parse_override(item)
        _set_dotted(raw, key, value)
    env = env if env is not None else EnvSettings()
    if env.seed is not None:
        logger.info(f"SVIMO_SEED overrides config seed -> {env.seed}")
        raw["seed"] = env.seed
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}") from e


def load_config(path: Optional[Path], overrides: Sequence[str] = ()) -> RunConfig:
    """Load a YAML run config; ``path=None`` means all defaults (desk config)."""
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config root must be a mapping: {path}")
        if loaded.get("format_version") != FORMAT_VERSION:
            raise ConfigError(
                f"{path.name}: format_version must be {FORMAT_VERSION}, "
                f"got {loaded.get('format_version')!r}"
            )
        raw = loaded
    return build_config(raw, overrides)


def dump_config(cfg: RunConfig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.model_dump(mode="json"), f, sort_keys=True)
