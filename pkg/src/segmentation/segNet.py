from typing import Dict, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.core import MapKind, ProbMap
from src.errors import ConfigurationError, DimensionError, ShapeError
from src.segmentation.abstractBackbone import AbstractBackbone

DEFAULT_DILATIONS = (1, 2, 4, 8)

class ASPPHead(nn.Module):
    """
    Parallel dilated 3x3 convolutions whose outputs are summed into class scores.
    """
    def __init__(self, in_channels: int, num_classes: int, dilations: Sequence[int] = DEFAULT_DILATIONS):
        super().__init__()

        self.branches = nn.ModuleList([
            nn.Conv2d(in_channels, num_classes, kernel_size=3, stride=1, padding=dilation, dilation=dilation, bias=True)
            for dilation in dilations
        ])

        for branch in self.branches:
            branch.weight.data.normal_(0, 0.01)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        out = self.branches[0](features)

        for branch in self.branches[1:]:
            out = out + branch(features)
        return out

class SegNet(nn.Module):
    """
    Two-branch segmentation network: a shared backbone, a semantic head with |C| outputs and a latent head
    with |L| outputs. Both branches are upsampled bilinearly to the input size and normalized per pixel.
    """
    def __init__(self, backbone: AbstractBackbone, semantic_count: int, latent_count: int,
                 dilations: Sequence[int] = DEFAULT_DILATIONS):
        super().__init__()

        if latent_count < 1:
            raise ConfigurationError(f"The latent head needs at least one class, got {latent_count}")
        if semantic_count < 2:
            raise ConfigurationError(f"The semantic head needs at least two classes, got {semantic_count}")

        self.backbone = backbone
        self.semantic_count = semantic_count
        self.latent_count = latent_count
        self.semantic_head = ASPPHead(backbone.out_channels, semantic_count, dilations)
        self.latent_head = ASPPHead(backbone.out_channels, latent_count, dilations)

    @property
    def output_stride(self) -> int:
        return self.backbone.output_stride

    def forward_logits(self, images: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        images: (N, H, W, 3). Returns semantic and latent scores (N, K, H, W) before normalization.
        """
        if images.dim() != 4 or images.shape[-1] != 3:
            raise DimensionError(f"Expected images of shape (N, H, W, 3), got {tuple(images.shape)}")

        height, width = images.shape[1], images.shape[2]
        stride = self.output_stride

        if height % stride != 0 or width % stride != 0:
            raise ShapeError(stride, f"Image size {height}x{width} must be a multiple of {stride}")

        features = self.backbone(images.permute(0, 3, 1, 2).contiguous())

        semantic = F.interpolate(self.semantic_head(features), size=(height, width), mode="bilinear", align_corners=True)
        latent = F.interpolate(self.latent_head(features), size=(height, width), mode="bilinear", align_corners=True)
        return semantic, latent

    def forward(self, images: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        semantic, latent = self.forward_logits(images)

        # Channel-last probability maps
        return F.softmax(semantic, dim=1).permute(0, 2, 3, 1), F.softmax(latent, dim=1).permute(0, 2, 3, 1)

def seg_forward(net: SegNet, images: torch.Tensor) -> Tuple[ProbMap, ProbMap]:
    semantic, latent = net(images)
    return ProbMap(semantic, kind=MapKind.SEMANTIC), ProbMap(latent, kind=MapKind.LATENT)

def parameter_report(net: SegNet) -> Dict[str, int]:
    def count(module: nn.Module) -> int:
        return sum(p.numel() for p in module.parameters())

    return {
        "backbone": count(net.backbone),
        "semantic_head": count(net.semantic_head),
        "latent_head": count(net.latent_head),
        "total": count(net),
    }
