"""
Desk-scale pre-activation residual classifier.

Parameters are registered in forward order, so named_parameters() lists the
network from input to head and "the last K layers" is simply the last K
parameter tensors.
"""

from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ClassifierConfig, DatasetConfig


def conv3x3(in_planes: int, planes: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_planes, planes, 3, stride=stride, padding=1, bias=False)


class PreActBlock(nn.Module):
    """BN-ReLU-conv, twice, with an identity or 1x1 shortcut."""

    def __init__(self, in_planes: int, planes: int, stride: int = 1):
        super().__init__()
        # Shortcut registered first so conv2 is the block's last conv
        self.shortcut = None
        if stride != 1 or in_planes != planes:
            self.shortcut = nn.Conv2d(in_planes, planes, 1, stride=stride, bias=False)
        self.bn1 = nn.BatchNorm2d(in_planes)
        self.conv1 = conv3x3(in_planes, planes, stride)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv2 = conv3x3(planes, planes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(x))
        shortcut = self.shortcut(out) if self.shortcut is not None else x
        out = self.conv1(out)
        out = self.conv2(F.relu(self.bn2(out)))
        return out + shortcut


class PreActResNet(nn.Module):
    """
    Small pre-activation ResNet.

    One stage per entry of `widths`; the first stage keeps resolution, later
    stages halve it. The final BN-ReLU output is the feature map the head pools
    (and the one fine-pruning masks).
    """

    def __init__(self, num_classes: int = 10, widths: Sequence[int] = (32, 64, 128),
                 blocks_per_stage: int = 1, input_shape: Tuple[int, int, int] = (3, 32, 32)):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.stem = conv3x3(input_shape[0], widths[0])

        stages: List[nn.Module] = []
        in_planes = widths[0]
        for i, width in enumerate(widths):
            blocks = []
            for j in range(blocks_per_stage):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(PreActBlock(in_planes, width, stride))
                in_planes = width
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)

        self.final_bn = nn.BatchNorm2d(in_planes)
        self.final_relu = nn.ReLU()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(in_planes, num_classes)

    @property
    def feature_channels(self) -> int:
        return self.fc.in_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.stages(self.stem(x))
        out = self.final_relu(self.final_bn(out))
        return self.fc(torch.flatten(self.pool(out), 1))


def build_classifier(config: ClassifierConfig, dataset: DatasetConfig,
                     widths: Sequence[int] = None) -> PreActResNet:
    return PreActResNet(
        num_classes=dataset.num_classes,
        widths=tuple(widths or config.widths),
        blocks_per_stage=config.blocks_per_stage,
        input_shape=tuple(dataset.image_shape),
    )


def trailing_parameter_names(model: nn.Module, count: int) -> List[str]:
    """Names of the last `count` parameter tensors (all of them if count is larger)."""
    names = [name for name, _ in model.named_parameters()]
    return names[max(0, len(names) - count):]
