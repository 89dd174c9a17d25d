"""
Trigger function G(x) = blur(x + eta * F(g(x)), k).

F is the frequency filter (DCT, low-frequency mask, inverse DCT) followed by a
per-image rescale that keeps its largest entry within [-1, 1]. Because g is
tanh-bounded the rescale only kicks in when filtering overshoots, and as a
scalar multiple it leaves the DCT support unchanged.
"""

import hashlib
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torchvision.transforms.functional as TF

from ..config import TriggerConfig
from ..errors import ConfigError, ContractError
from ..models.generator import GeneratorNet
from .frequency import FrequencyMask, filter_noise


def bound_noise(noise: torch.Tensor) -> torch.Tensor:
    """Scale each image by 1 / max(1, max|n|) so the infinity norm is at most 1."""
    peak = noise.abs().flatten(1).amax(dim=1).clamp(min=1.0)
    return noise / peak.view(-1, *([1] * (noise.dim() - 1)))


def blur(images: torch.Tensor, kernel_size: int, sigma: float) -> torch.Tensor:
    """Normalized Gaussian blur (weights sum to 1), differentiable."""
    return TF.gaussian_blur(images, [kernel_size, kernel_size], [sigma, sigma])


def trigger_noise(x: torch.Tensor, generator: GeneratorNet, mask: FrequencyMask) -> torch.Tensor:
    """F(g(x)): frequency-filtered, bounded generator noise (before eta and blur)."""
    return bound_noise(filter_noise(generator(x), mask))


def apply_trigger(x: torch.Tensor, generator: GeneratorNet, config: TriggerConfig,
                  mask: Optional[FrequencyMask] = None, sigma: Optional[float] = None,
                  clamp_range: Optional[Tuple[torch.Tensor, torch.Tensor]] = None) -> torch.Tensor:
    """
    Triggered images G(x) for a normalized batch x.

    sigma defaults to the fixed evaluation sigma. The result is clamped to
    clamp_range (per-channel normalized bounds) after blurring when given.
    """
    if config.eta < 0:
        raise ConfigError(f"eta must be >= 0, got {config.eta}")
    if x.dim() != 4 or x.shape[1] != generator.channels:
        raise ContractError(f"trigger expects (N, {generator.channels}, H, W), got {tuple(x.shape)}")
    if mask is None:
        mask = FrequencyMask.low_pass(config.mask_ratio, x.shape[-2], x.shape[-1])
    return compose_trigger(x, trigger_noise(x, generator, mask), config, sigma, clamp_range)


def compose_trigger(x: torch.Tensor, noise: torch.Tensor, config: TriggerConfig,
                    sigma: Optional[float] = None,
                    clamp_range: Optional[Tuple[torch.Tensor, torch.Tensor]] = None) -> torch.Tensor:
    """blur(x + eta * noise), clamped; noise is the already filtered F(g(x))."""
    out = x + config.eta * noise
    if config.blur_enabled:
        out = blur(out, config.blur_kernel_size, config.fixed_sigma if sigma is None else sigma)
    if clamp_range is not None:
        lo, hi = (b.to(dtype=out.dtype, device=out.device) for b in clamp_range)
        out = torch.clamp(out, lo, hi)
    return out


class TriggerGenerator(nn.Module):
    """
    Learnable generator g bundled with eta, the frequency mask and blur settings.

    Only the network's parameters are trainable; the mask and clamp bounds are
    buffers so they follow .to() and land in the checkpoint.
    """

    def __init__(self, net: GeneratorNet, config: TriggerConfig, image_shape: Tuple[int, int, int],
                 clamp_range: Optional[Tuple[torch.Tensor, torch.Tensor]] = None):
        super().__init__()
        config.validate()
        self.net = net
        self.config = config
        self.image_shape = tuple(image_shape)
        _, h, w = self.image_shape
        self.frequency_mask = FrequencyMask.low_pass(config.mask_ratio, h, w)
        self.register_buffer('mask', self.frequency_mask.values.clone())
        if clamp_range is not None:
            self.register_buffer('clamp_lo', clamp_range[0].clone())
            self.register_buffer('clamp_hi', clamp_range[1].clone())
        else:
            self.clamp_lo = None
            self.clamp_hi = None

    @property
    def clamp_range(self) -> Optional[Tuple[torch.Tensor, torch.Tensor]]:
        if self.clamp_lo is None:
            return None
        return self.clamp_lo, self.clamp_hi

    def noise(self, x: torch.Tensor) -> torch.Tensor:
        return trigger_noise(x, self.net, FrequencyMask(self.mask, self.config.mask_ratio))

    def sample_sigma(self, rng: np.random.Generator) -> float:
        """Per-batch blur sigma: U(sigma_range) when sampling, else the midpoint."""
        if self.config.sigma_mode == 'fixed':
            return self.config.fixed_sigma
        lo, hi = self.config.sigma_range
        return float(rng.uniform(lo, hi))

    def forward(self, x: torch.Tensor, sigma: Optional[float] = None) -> torch.Tensor:
        return apply_trigger(x, self.net, self.config,
                             mask=FrequencyMask(self.mask, self.config.mask_ratio),
                             sigma=sigma, clamp_range=self.clamp_range)

    def triggered_with_noise(self, x: torch.Tensor,
                             sigma: Optional[float] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """(G(x), F(g(x))) from a single generator pass."""
        if self.config.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.config.eta}")
        noise = self.noise(x)
        return compose_trigger(x, noise, self.config, sigma, self.clamp_range), noise

    @torch.no_grad()
    def apply_batched(self, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
        """Eval-mode G over a large tensor (fixed sigma, no autograd)."""
        device = self.mask.device
        out = [self(images[i:i + batch_size].to(device=device, dtype=self.mask.dtype)).cpu()
               for i in range(0, images.shape[0], batch_size)]
        return torch.cat(out) if out else images.clone()

    def snapshot_id(self) -> str:
        """Content hash of the generator state (parameters + buffers)."""
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode('utf-8'))
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        digest.update(repr(sorted(vars(self.config).items())).encode('utf-8'))
        return digest.hexdigest()[:16]
