from enum import Enum
import os
from typing import Any, Dict, List, Union

import json5

from src.errors import ConfigurationError
from src.segmentation.discriminator import MIN_INPUT_SIZE

class ConsistencyVariant(Enum):
    CROSS_ENTROPY = 1
    SYMMETRIC_KL = 2

    @staticmethod
    def from_string(s: str):
        normalized = s.lower().replace("-", "_") if s is not None else None

        if normalized == "cross_entropy":
            return ConsistencyVariant.CROSS_ENTROPY
        elif normalized == "symmetric_kl":
            return ConsistencyVariant.SYMMETRIC_KL
        else:
            raise ValueError(f"Invalid value for ConsistencyVariant: {s}")

class LatentMode(Enum):
    LEARNED = 1
    MANUAL = 2
    IDENTITY = 3

    @staticmethod
    def from_string(s: str):
        normalized = s.lower() if s is not None else None

        if normalized == "learned":
            return LatentMode.LEARNED
        elif normalized == "manual":
            return LatentMode.MANUAL
        elif normalized == "identity":
            return LatentMode.IDENTITY
        else:
            raise ValueError(f"Invalid value for LatentMode: {s}")

class Reduction(Enum):
    MEAN = 1
    SUM = 2

    @staticmethod
    def from_string(s: Union[str, "Reduction"]):
        if isinstance(s, Reduction):
            return s
        normalized = s.lower() if s is not None else None

        if normalized == "mean":
            return Reduction.MEAN
        elif normalized == "sum":
            return Reduction.SUM
        else:
            raise ValueError(f"Invalid value for Reduction: {s}")

class Precision(Enum):
    FLOAT32 = 1
    FLOAT64 = 2

    @staticmethod
    def from_string(s: str):
        normalized = s.lower() if s is not None else None

        if normalized in ("float32", "single"):
            return Precision.FLOAT32
        elif normalized in ("float64", "double"):
            return Precision.FLOAT64
        else:
            raise ValueError(f"Invalid value for Precision: {s}")

# Section prefixes used when the configuration is written back with dotted keys
CONFIG_SECTIONS = {
    "loss": ["lambda_adv", "lambda_unlabeled", "reduction", "consistency_variant", "use_latent", "use_consistency",
             "adv_labeled", "adv_unlabeled", "disc_fake_on_unlabeled"],
    "latent": ["latent_mode", "max_latent", "allow_latent_overflow", "ema_alpha", "manual_mapping"],
    "optim": ["lr0", "momentum", "weight_decay", "disc_lr", "power"],
    "schedule": ["max_iters", "warmup_iters", "checkpoint_every"],
    "data": ["batch_size", "labeled_fraction", "crop_size", "scale_min", "scale_max", "flip", "ignore_index",
             "eval_batch_size"],
    "model": ["backbone", "backbone_width", "backbone_stages", "head_dilations", "disc_width"],
    "run": ["seed", "seeds", "precision", "device"],
}

class RunConfig:
    def __init__(self, lambda_adv: float = 0.01, lambda_unlabeled: float = 0.1,
                 reduction: str = "mean", consistency_variant: str = "cross_entropy",
                 use_latent: bool = True, use_consistency: bool = True,
                 adv_labeled: bool = True, adv_unlabeled: bool = True, disc_fake_on_unlabeled: bool = True,
                 latent_mode: str = "learned", max_latent: int = 20, allow_latent_overflow: bool = False,
                 ema_alpha: Union[float, str] = "auto", manual_mapping: str = None,
                 lr0: float = 2.5e-4, momentum: float = 0.9, weight_decay: float = 1e-4,
                 disc_lr: float = 1e-4, power: float = 0.9,
                 max_iters: int = 2000, warmup_iters: int = 500, checkpoint_every: int = 500,
                 batch_size: int = 8, labeled_fraction: float = 0.125, crop_size: int = 64,
                 scale_min: float = 0.5, scale_max: float = 1.5, flip: bool = True,
                 ignore_index: int = 255, eval_batch_size: int = 4,
                 backbone: str = "small", backbone_width: int = 32, backbone_stages: int = 4,
                 head_dilations: List[int] = [1, 2, 4, 8], disc_width: int = 64,
                 seed: int = 0, seeds: int = 1, precision: str = "float32", device: str = None):

        # Loss weights and switches
        self.lambda_adv = lambda_adv
        self.lambda_unlabeled = lambda_unlabeled
        self.reduction = reduction
        self.consistency_variant = consistency_variant
        self.use_latent = use_latent
        self.use_consistency = use_consistency
        self.adv_labeled = adv_labeled
        self.adv_unlabeled = adv_unlabeled
        self.disc_fake_on_unlabeled = disc_fake_on_unlabeled

        # Latent branch
        self.latent_mode = latent_mode
        self.max_latent = max_latent
        self.allow_latent_overflow = allow_latent_overflow
        self.ema_alpha = ema_alpha
        self.manual_mapping = manual_mapping

        # Optimizers
        self.lr0 = lr0
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.disc_lr = disc_lr
        self.power = power

        # Schedule
        self.max_iters = max_iters
        self.warmup_iters = warmup_iters
        self.checkpoint_every = checkpoint_every

        # Data
        self.batch_size = batch_size
        self.labeled_fraction = labeled_fraction
        self.crop_size = crop_size
        self.scale_min = scale_min
        self.scale_max = scale_max
        self.flip = flip
        self.ignore_index = ignore_index
        self.eval_batch_size = eval_batch_size

        # Networks
        self.backbone = backbone
        self.backbone_width = backbone_width
        self.backbone_stages = backbone_stages
        self.head_dilations = list(head_dilations)
        self.disc_width = disc_width

        self.seed = seed
        self.seeds = seeds
        self.precision = precision
        self.device = device

    def get_consistency_variant(self) -> ConsistencyVariant:
        return ConsistencyVariant.from_string(self.consistency_variant)

    def get_latent_mode(self) -> LatentMode:
        return LatentMode.from_string(self.latent_mode)

    def get_reduction(self) -> Reduction:
        return Reduction.from_string(self.reduction)

    def get_precision(self) -> Precision:
        return Precision.from_string(self.precision)

    def adversarial_enabled(self) -> bool:
        return self.lambda_adv > 0 and (self.adv_labeled or self.adv_unlabeled)

    def validate(self):
        for name in ["lambda_adv", "lambda_unlabeled", "lr0", "momentum", "weight_decay", "disc_lr"]:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seeds < 1:
            raise ConfigurationError(f"seeds must be >= 1, got {self.seeds}")
        if self.max_iters < 0 or self.warmup_iters < 0:
            raise ConfigurationError("max_iters and warmup_iters must be >= 0")
        if self.max_latent < 1:
            raise ConfigurationError(f"max_latent must be >= 1, got {self.max_latent}")
        if not (0 < self.labeled_fraction <= 1):
            raise ConfigurationError(f"labeled_fraction must be in (0, 1], got {self.labeled_fraction}")
        if self.scale_min <= 0 or self.scale_min > self.scale_max:
            raise ConfigurationError(f"Invalid scale range [{self.scale_min}, {self.scale_max}]")
        if self.adversarial_enabled() and self.crop_size < MIN_INPUT_SIZE:
            raise ConfigurationError(f"crop_size {self.crop_size} is below the discriminator minimum of {MIN_INPUT_SIZE}; "
                                     "raise it or disable the adversarial losses")
        if self.ema_alpha != "auto":
            alpha = float(self.ema_alpha)
            if not (0 < alpha < 1):
                raise ConfigurationError(f"ema_alpha must be in (0, 1) or 'auto', got {self.ema_alpha}")

        try:
            self.get_consistency_variant()
            self.get_latent_mode()
            self.get_reduction()
            self.get_precision()
        except ValueError as e:
            raise ConfigurationError(str(e))
        return self

    def update(self, **new_values):
        result = RunConfig(**self.__dict__)

        for key, value in new_values.items():
            if key not in result.__dict__:
                raise ConfigurationError(f"Unknown configuration key: {key}")
            setattr(result, key, value)
        return result

    def to_dict(self) -> Dict[str, Any]:
        """
        Serialize the configuration with dotted keys (section.field), the same format parse_file reads.
        """
        result = {}

        for section, fields in CONFIG_SECTIONS.items():
            for field in fields:
                result[section + "." + field] = getattr(self, field)
        return result

    @staticmethod
    def from_dict(data: Dict[str, Any]):
        values = {}

        for key, value in data.items():
            field = key.split(".")[-1]

            if field not in _FIELD_NAMES:
                raise ConfigurationError(f"Unknown configuration key: {key}")
            values[field] = value
        return RunConfig(**values)

    @staticmethod
    def create_default(**kwargs):
        config_path = os.environ.get("LATENTSEG_CONFIG", "config.json5")

        if os.path.exists(config_path):
            run_config = RunConfig.parse_file(config_path)
        else:
            run_config = RunConfig()

        # Update with kwargs
        if len(kwargs) > 0:
            run_config = run_config.update(**kwargs)
        return run_config

    @staticmethod
    def parse_file(config_path: str):
        with open(config_path, "r") as f:
            # Load using json5, so both plain JSON and commented JSON5 files work
            data = json5.load(f)

        if not isinstance(data, dict):
            raise ConfigurationError(f"{config_path}: expected a flat object of configuration keys")
        return RunConfig.from_dict(data)

_FIELD_NAMES = set(RunConfig().__dict__.keys())
