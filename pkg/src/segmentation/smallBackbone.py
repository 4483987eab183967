import torch
import torch.nn as nn

from src.segmentation.abstractBackbone import AbstractBackbone

def _conv_block(in_channels: int, out_channels: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_channels, out_channels, kernel_size=3, stride=1, padding=1, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=True),
    )

class SmallBackbone(AbstractBackbone):
    """
    A small from-scratch convolutional encoder. The first stage keeps full resolution and every
    following stage halves it, so 4 stages give an output stride of 8. Width doubles per stage.
    """
    def __init__(self, width: int = 32, stages: int = 4, in_channels: int = 3):
        if stages < 1:
            raise ValueError(f"The backbone needs at least one stage, got {stages}")

        channels = [ width * (2 ** min(i, 2)) for i in range(stages) ]
        super().__init__(out_channels=channels[-1], output_stride=2 ** (stages - 1))

        blocks = []
        previous = in_channels

        for i, current in enumerate(channels):
            blocks.append(_conv_block(previous, current, stride=1 if i == 0 else 2))
            previous = current
        self.stages = nn.Sequential(*blocks)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.stages(images)
