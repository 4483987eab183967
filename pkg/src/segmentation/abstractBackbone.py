import abc

import torch
import torch.nn as nn

class AbstractBackbone(nn.Module):
    """
    Feature encoder shared by the semantic and latent heads.

    Forward contract: takes images (N, 3, H, W) with H and W divisible by output_stride and
    returns features (N, out_channels, H / output_stride, W / output_stride).
    """
    def __init__(self, out_channels: int, output_stride: int):
        super().__init__()
        self.out_channels = out_channels
        self.output_stride = output_stride

    @abc.abstractmethod
    def forward(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError()
