import os
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Load environment variables
load_dotenv()

# Ambient settings (logging, caches, optional data locations)
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE", "")
GRID_CACHE_SIZE = int(os.getenv("GRID_CACHE_SIZE", "512"))
MNIST_DIR = os.getenv("MNIST_DIR")

# Training defaults
ADAM_LR = 1e-3
LR_DECAY = 0.1
GRAD_CLIP_L2 = 8.0
KAPPA_FINAL = 0.5
TRAIN_BATCH_SIZE = 256

# Certification / tuning defaults
CERT_BATCH_SIZE = 10000
TUNE_SAMPLES = 10

# Model file format
MODEL_MAGIC = "GEOCERT-MODEL"
MODEL_SCHEMA_VERSION = 1

VERSION = "0.3.0"


class TrainConfig(BaseModel):
    """Validated training configuration."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    epochs: int = Field(ge=0)
    batch_size: int = Field(default=TRAIN_BATCH_SIZE, gt=0)
    warmup_epochs: int = Field(default=0, ge=0)
    rampup_epochs: int = Field(default=0, ge=0)
    kappa_final: float = KAPPA_FINAL
    nu_final: List[float]
    lr: float = Field(default=ADAM_LR, gt=0)
    lr_milestones: List[int] = Field(default_factory=list)
    lr_gamma: float = LR_DECAY
    grad_clip_l2: Optional[float] = GRAD_CLIP_L2
    seed: int = 0
    method: str = "cgt"
    task: str = "classification"
    ibp_epsilon: float = Field(default=0.1, ge=0)
    validation_fraction: float = Field(default=0.0, ge=0, lt=1)
    augmentation: object = None

    @field_validator("kappa_final")
    @classmethod
    def _kappa_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"kappa_final must lie in [0, 1], got {value}")
        return value

    @field_validator("nu_final")
    @classmethod
    def _nu_nonnegative(cls, value: List[float]) -> List[float]:
        if any(v < 0 for v in value):
            raise ValueError(f"nu_final must be nonnegative, got {value}")
        return value

    @field_validator("method")
    @classmethod
    def _known_method(cls, value: str) -> str:
        if value not in ("cgt", "augment", "ibp_augment"):
            raise ValueError(f"Unsupported training method: {value}")
        return value

    @field_validator("task")
    @classmethod
    def _known_task(cls, value: str) -> str:
        if value not in ("classification", "regression"):
            raise ValueError(f"Unsupported task: {value}")
        return value

    @model_validator(mode="after")
    def _schedule_fits(self) -> "TrainConfig":
        if self.warmup_epochs + self.rampup_epochs > self.epochs:
            raise ValueError(
                f"warmup ({self.warmup_epochs}) + rampup ({self.rampup_epochs}) "
                f"exceeds epochs ({self.epochs})"
            )
        if self.augmentation is not None:
            n_params = len(self.augmentation.parameters())
            if len(self.nu_final) != n_params:
                raise ValueError(
                    f"nu_final has {len(self.nu_final)} entries but the transform chain "
                    f"has {n_params} parameters"
                )
        return self

