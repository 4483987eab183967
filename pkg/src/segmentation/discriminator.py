from typing import Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.core import ProbMap, _values
from src.errors import DimensionError

# Five stride-2 convolutions leave at least one score per map from this size on
MIN_INPUT_SIZE = 32

class Discriminator(nn.Module):
    """
    Fully convolutional discriminator: five 4x4 convolutions with stride 2 (ndf, 2ndf, 4ndf, 8ndf, 1 channels),
    leaky ReLU (0.2) after all but the last. The score map is resized to the input size and squashed by a sigmoid.
    """
    def __init__(self, num_classes: int, ndf: int = 64):
        super().__init__()
        self.num_classes = num_classes

        self.conv1 = nn.Conv2d(num_classes, ndf, kernel_size=4, stride=2, padding=1)
        self.conv2 = nn.Conv2d(ndf, ndf * 2, kernel_size=4, stride=2, padding=1)
        self.conv3 = nn.Conv2d(ndf * 2, ndf * 4, kernel_size=4, stride=2, padding=1)
        self.conv4 = nn.Conv2d(ndf * 4, ndf * 8, kernel_size=4, stride=2, padding=1)
        self.classifier = nn.Conv2d(ndf * 8, 1, kernel_size=4, stride=2, padding=1)

        self.leaky_relu = nn.LeakyReLU(negative_slope=0.2)

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        """
        p: probability map (N, H, W, |C|). Returns confidence (N, H, W) in (0, 1).
        """
        if p.dim() != 4 or p.shape[-1] != self.num_classes:
            raise DimensionError(f"Discriminator expects (N, H, W, {self.num_classes}), got {tuple(p.shape)}")
        if p.shape[1] < MIN_INPUT_SIZE or p.shape[2] < MIN_INPUT_SIZE:
            raise DimensionError(f"Discriminator input must be at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}, got {p.shape[1]}x{p.shape[2]}")

        height, width = p.shape[1], p.shape[2]

        x = p.permute(0, 3, 1, 2).contiguous()
        x = self.leaky_relu(self.conv1(x))
        x = self.leaky_relu(self.conv2(x))
        x = self.leaky_relu(self.conv3(x))
        x = self.leaky_relu(self.conv4(x))
        x = self.classifier(x)

        x = F.interpolate(x, size=(height, width), mode="bilinear", align_corners=True)
        return torch.sigmoid(x).squeeze(1)

def disc_forward(d: Discriminator, p: Union[ProbMap, torch.Tensor]) -> torch.Tensor:
    return d(_values(p))

def set_requires_grad(module: nn.Module, requires_grad: bool):
    for param in module.parameters():
        param.requires_grad = requires_grad
