from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from src.core import DEFAULT_IGNORE_INDEX, Batch

@dataclass(frozen=True)
class AugmentParams:
    """
    Geometric transform of one sample. crop_y and crop_x are relative offsets in [0, 1]
    of the crop window inside the scaled (and padded) image; 0.5 is a centered crop.
    """
    scale: float = 1.0
    flip: bool = False
    crop_y: float = 0.5
    crop_x: float = 0.5

@dataclass(frozen=True)
class AugmentOptions:
    crop_size: int = 64
    scale_range: Tuple[float, float] = (0.5, 1.5)
    flip: bool = True
    ignore_index: int = DEFAULT_IGNORE_INDEX
    mean_pixel: Sequence[float] = (0.5, 0.5, 0.5)

def sample_params(rng: np.random.Generator, options: AugmentOptions) -> AugmentParams:
    scale = float(rng.uniform(options.scale_range[0], options.scale_range[1]))
    flip = bool(rng.random() < 0.5) if options.flip else False
    crop_y, crop_x = (float(x) for x in rng.random(2))
    return AugmentParams(scale=scale, flip=flip, crop_y=crop_y, crop_x=crop_x)

def _scale(image: torch.Tensor, labels: Optional[torch.Tensor], scale: float) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    height, width = image.shape[0], image.shape[1]
    size = (max(1, int(round(height * scale))), max(1, int(round(width * scale))))

    if size == (height, width):
        return image, labels

    image = F.interpolate(image.permute(2, 0, 1).unsqueeze(0), size=size, mode="bilinear", align_corners=False)
    image = image.squeeze(0).permute(1, 2, 0)

    if labels is not None:
        # Nearest neighbour keeps every label a valid class index
        labels = F.interpolate(labels[None, None].float(), size=size, mode="nearest")[0, 0].long()
    return image, labels

def _pad(image: torch.Tensor, labels: Optional[torch.Tensor], crop_size: int, ignore_index: int,
         mean_pixel: Sequence[float]) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    height, width = image.shape[0], image.shape[1]
    pad_h, pad_w = max(crop_size - height, 0), max(crop_size - width, 0)

    if pad_h == 0 and pad_w == 0:
        return image, labels

    padded = torch.empty((height + pad_h, width + pad_w, 3), dtype=image.dtype)
    padded[:] = torch.tensor(mean_pixel, dtype=image.dtype)
    padded[:height, :width] = image

    if labels is not None:
        padded_labels = torch.full((height + pad_h, width + pad_w), ignore_index, dtype=labels.dtype)
        padded_labels[:height, :width] = labels
        labels = padded_labels
    return padded, labels

def apply_augment(image: torch.Tensor, labels: Optional[torch.Tensor], params: AugmentParams,
                  options: AugmentOptions) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Scale, mirror, pad and crop one sample (image (H, W, 3), labels (H, W) or None).
    The same geometric transform is applied to image and labels.
    """
    image, labels = _scale(image, labels, params.scale)

    if params.flip:
        image = torch.flip(image, dims=[1])
        labels = torch.flip(labels, dims=[1]) if labels is not None else None

    image, labels = _pad(image, labels, options.crop_size, options.ignore_index, options.mean_pixel)

    height, width = image.shape[0], image.shape[1]
    top = int(params.crop_y * (height - options.crop_size))
    left = int(params.crop_x * (width - options.crop_size))

    image = image[top:top + options.crop_size, left:left + options.crop_size].contiguous()
    if labels is not None:
        labels = labels[top:top + options.crop_size, left:left + options.crop_size].contiguous()
    return image, labels

def augment_samples(samples: Sequence[Tuple[torch.Tensor, Optional[torch.Tensor]]], rng: np.random.Generator,
                    options: AugmentOptions) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Augment (image, labels) pairs of possibly different sizes with parameters drawn in order from rng,
    and stack the crops.
    """
    images, labels = [], []

    for image, label_map in samples:
        image, label_map = apply_augment(image, label_map, sample_params(rng, options), options)
        images.append(image)
        labels.append(label_map)

    stacked_labels = torch.stack(labels) if all(l is not None for l in labels) else None
    return torch.stack(images), stacked_labels

def augment(batch: Batch, rng: np.random.Generator, options: AugmentOptions) -> Batch:
    samples = [ (batch.images[i], batch.labels[i] if batch.labels is not None else None)
                for i in range(batch.images.shape[0]) ]
    images, labels = augment_samples(samples, rng, options)
    return Batch(images, labels=labels, labeled=batch.labeled, ids=list(batch.ids))
