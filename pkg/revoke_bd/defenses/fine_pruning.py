"""
Fine-pruning sweep.

Channels of the classifier's final feature map (the last convolutional
stage's output after the closing BN-ReLU) are ranked by their mean activation
on clean probe images and switched off in ascending order. A channel is
switched off by masking its final BatchNorm scale and shift with
torch.nn.utils.prune, so its post-ReLU activation is exactly zero. No
fine-tuning follows; the curve reports the raw pruning sweep.
"""

import copy
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.utils.prune as prune

from ..errors import ContractError
from ..evaluation.metrics import attack_success_rate, benign_accuracy
from ..logger import get_logger

log = get_logger('defense')


@dataclass
class PrunePoint:
    neurons_pruned: int
    fraction_pruned: float
    ba: float
    asr: float


@dataclass
class PruneCurve:
    """(pruned channels, BA, ASR) points, pruned count strictly increasing."""
    total_channels: int
    points: List[PrunePoint] = field(default_factory=list)

    def add(self, point: PrunePoint):
        if self.points and point.neurons_pruned <= self.points[-1].neurons_pruned:
            raise ContractError("prune curve points must be strictly increasing")
        self.points.append(point)

    def rows(self) -> List[dict]:
        return [asdict(p) for p in self.points]


def default_prune_steps(total: int, stride: int) -> List[int]:
    steps = list(range(0, total, stride))
    return steps + [total] if steps[-1] != total else steps


@torch.no_grad()
def channel_activation(model: nn.Module, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    """Mean |activation| per channel of model.final_relu over the images."""
    captured = []
    handle = model.final_relu.register_forward_hook(
        lambda _m, _i, out: captured.append(out.abs().mean(dim=(0, 2, 3)) * out.shape[0]))
    model.eval()
    param = next(model.parameters())
    try:
        for i in range(0, images.shape[0], batch_size):
            model(images[i:i + batch_size].to(device=param.device, dtype=param.dtype))
    finally:
        handle.remove()
    return (torch.stack(captured).sum(dim=0) / images.shape[0]).cpu()


def fine_prune(model: nn.Module, probe_images: torch.Tensor, test_images: torch.Tensor,
               test_labels: torch.Tensor, trigger, y_target: int,
               prune_steps: Optional[Sequence[int]] = None, stride: int = 8,
               batch_size: int = 256) -> PruneCurve:
    """
    Prune the least active channels first and record BA/ASR after each step.

    The model passed in is not modified. prune_steps lists cumulative pruned
    counts; 0 is always evaluated first on the unpruned copy.
    """
    if probe_images.shape[0] == 0:
        raise ContractError("fine-pruning needs a non-empty clean probe set")
    pruned = copy.deepcopy(model)
    pruned.eval()
    total = pruned.final_bn.num_features
    steps = list(prune_steps) if prune_steps is not None else default_prune_steps(total, stride)
    steps = [0] + [s for s in steps if s > 0]
    if any(s > total for s in steps):
        raise ContractError(f"cannot prune more than {total} channels", {'steps': steps})

    order = torch.argsort(channel_activation(pruned, probe_images, batch_size))
    mask = torch.ones(total, dtype=pruned.final_bn.weight.dtype, device=pruned.final_bn.weight.device)
    curve = PruneCurve(total_channels=total)

    for count in steps:
        if count > 0:
            mask[order[:count].to(mask.device)] = 0.0
            if not prune.is_pruned(pruned.final_bn):
                prune.custom_from_mask(pruned.final_bn, 'weight', mask)
                prune.custom_from_mask(pruned.final_bn, 'bias', mask)
            else:
                pruned.final_bn.weight_mask.copy_(mask)
                pruned.final_bn.bias_mask.copy_(mask)
        ba = benign_accuracy(pruned, test_images, test_labels, batch_size)
        asr = attack_success_rate(pruned, trigger, test_images, test_labels, y_target, batch_size)
        curve.add(PrunePoint(neurons_pruned=count, fraction_pruned=count / total, ba=ba, asr=asr))
        log.debug(f"Pruned {count}/{total}: BA {ba:.2f}, ASR {asr:.2f}")
    return curve
