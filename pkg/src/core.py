from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Union

import torch

from src.errors import ConfigurationError, DimensionError, LabelRangeError, NormalizationError, RangeError

# Channel sums of a probability map must match 1 within this tolerance (single precision softmax)
NORMALIZATION_TOLERANCE = 1e-5

DEFAULT_IGNORE_INDEX = 255

class MapKind(Enum):
    SEMANTIC = 1
    LATENT = 2

@dataclass(frozen=True)
class ClassSpace:
    semantic_count: int
    latent_count: int
    ignore_index: int = DEFAULT_IGNORE_INDEX
    names: Optional[List[str]] = None
    allow_latent_overflow: bool = False

    def __post_init__(self):
        if self.semantic_count < 2:
            raise ConfigurationError(f"At least 2 semantic classes are required, got {self.semantic_count}")
        if self.latent_count < 1:
            raise ConfigurationError(f"At least 1 latent class is required, got {self.latent_count}")
        if 0 <= self.ignore_index < self.semantic_count:
            raise ConfigurationError(f"ignore_index {self.ignore_index} collides with a semantic class")
        if self.latent_count > self.semantic_count and not self.allow_latent_overflow:
            raise ConfigurationError(f"{self.latent_count} latent classes exceed {self.semantic_count} semantic classes; "
                                     "set allow_latent_overflow to permit this")
        if self.names is not None and len(self.names) != self.semantic_count:
            raise ConfigurationError(f"Expected {self.semantic_count} class names, got {len(self.names)}")

    def get_names(self) -> List[str]:
        if self.names is not None:
            return list(self.names)
        return [ f"class_{c}" for c in range(self.semantic_count) ]

@dataclass(frozen=True)
class ProbMap:
    """
    Per-pixel probability distribution in channel-last layout (N, H, W, K).

    masked: True for one-hot ground truth maps, where ignored pixels carry an all-zero row
    that every downstream statistic skips.
    """
    values: torch.Tensor
    kind: MapKind = MapKind.SEMANTIC
    masked: bool = False

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def valid_mask(self) -> torch.Tensor:
        return self.values.sum(dim=-1) > 0

@dataclass
class Batch:
    images: torch.Tensor
    labels: Optional[torch.Tensor] = None
    labeled: bool = True
    ids: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.images.dim() != 4 or self.images.shape[-1] != 3:
            raise DimensionError(f"Batch images must be (N, H, W, 3), got {tuple(self.images.shape)}")
        if self.labeled and self.labels is None:
            raise ConfigurationError("A labeled batch must carry labels")
        if self.labels is not None and self.labels.shape != self.images.shape[:3]:
            raise DimensionError(f"Labels {tuple(self.labels.shape)} do not match images {tuple(self.images.shape)}")

    def withheld(self) -> "Batch":
        """
        The same images with their labels removed, as seen by the unlabeled losses.
        """
        return Batch(self.images, labels=None, labeled=False, ids=list(self.ids))

    def to(self, device=None, dtype=None) -> "Batch":
        images = self.images.to(device=device, dtype=dtype)
        labels = self.labels.to(device=device) if self.labels is not None else None
        return Batch(images, labels=labels, labeled=self.labeled, ids=list(self.ids))

def _values(p: Union[ProbMap, torch.Tensor]) -> torch.Tensor:
    return p.values if isinstance(p, ProbMap) else p

def validate_labels(labels: torch.Tensor, class_space: ClassSpace):
    invalid = ((labels < 0) | (labels >= class_space.semantic_count)) & (labels != class_space.ignore_index)

    if invalid.any():
        position = tuple(int(x) for x in invalid.nonzero()[0].tolist())
        raise LabelRangeError(position, int(labels[position]))

def one_hot(labels: torch.Tensor, class_space: ClassSpace, dtype: torch.dtype = torch.float32) -> ProbMap:
    """
    One-hot encode a label map (N, H, W) into a masked semantic ProbMap (N, H, W, |C|).
    Ignored pixels become all-zero rows.
    """
    validate_labels(labels, class_space)

    valid = labels != class_space.ignore_index
    safe_labels = torch.where(valid, labels, torch.zeros_like(labels)).long()

    encoded = torch.nn.functional.one_hot(safe_labels, num_classes=class_space.semantic_count).to(dtype)
    encoded = encoded * valid.unsqueeze(-1).to(dtype)
    return ProbMap(encoded, kind=MapKind.SEMANTIC, masked=True)

def validate_probmap(p: Union[ProbMap, torch.Tensor], tolerance: float = NORMALIZATION_TOLERANCE):
    values = _values(p).detach()
    masked = isinstance(p, ProbMap) and p.masked

    if values.numel() == 0:
        return

    min_value = float(values.min())
    if min_value < 0 or float(values.max()) > 1 + tolerance:
        raise RangeError(min_value if min_value < 0 else float(values.max()))

    sums = values.sum(dim=-1)
    if masked:
        # Zero rows mark ignored pixels
        sums = sums[sums > 0]
        if sums.numel() == 0:
            return

    deviation = float((sums - 1).abs().max())
    if deviation > tolerance:
        raise NormalizationError(deviation)
