"""
Trigger generator network g.

A two-level encoder-decoder with skip connections and a tanh head, standing
in for a full U-Net. Output has the input's shape and lies in [-1, 1], so the
trigger strength eta alone sets the perturbation scale.
"""

import torch
import torch.nn as nn

from ..config import GeneratorConfig
from ..errors import ContractError


class GeneratorNet(nn.Module):
    """Encoder-decoder g(x) with skip connections."""

    def __init__(self, channels: int = 3, base_channels: int = 16):
        super().__init__()
        b = base_channels
        self.channels = channels
        self.enc1 = nn.Sequential(nn.Conv2d(channels, b, 3, padding=1), nn.ReLU())
        self.enc2 = nn.Sequential(nn.Conv2d(b, 2 * b, 3, stride=2, padding=1), nn.ReLU())
        self.bottleneck = nn.Sequential(
            nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1), nn.ReLU(),
            nn.ConvTranspose2d(4 * b, 2 * b, 4, stride=2, padding=1), nn.ReLU(),
        )
        self.up = nn.Sequential(nn.ConvTranspose2d(4 * b, b, 4, stride=2, padding=1), nn.ReLU())
        self.head = nn.Conv2d(2 * b, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ContractError(f"generator expects (N, {self.channels}, H, W), got {tuple(x.shape)}")
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ContractError(f"generator needs H and W divisible by 4, got {tuple(x.shape[-2:])}")
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        mid = self.bottleneck(e2)
        up = self.up(torch.cat([e2, mid], dim=1))
        return torch.tanh(self.head(torch.cat([e1, up], dim=1)))


def build_generator(config: GeneratorConfig, channels: int) -> GeneratorNet:
    return GeneratorNet(channels=channels, base_channels=config.base_channels)
