"""
Generator objectives.

All four losses are minibatch means. The cross-entropy terms evaluate a frozen
classifier on G(x); gradients flow only into the generator. Each function
accepts a precomputed `triggered` batch so the outer step can run the
generator once and share G(x) between terms.
"""

from dataclasses import asdict, dataclass
from typing import Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import LossWeights
from ..errors import ContractError, NumericalFaultError
from ..models.training import forward

Scalar = Union[float, torch.Tensor]


def _num_classes(model: nn.Module, logits: torch.Tensor) -> int:
    return getattr(model, 'num_classes', logits.shape[1])


def _finite(loss: torch.Tensor, name: str) -> torch.Tensor:
    if not bool(torch.isfinite(loss)):
        raise NumericalFaultError(f"{name} loss is not finite")
    return loss


def attack_loss(model_b: nn.Module, trigger, images: torch.Tensor, y_target: int,
                triggered: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean CE of f_b(G(x)) against the constant target label."""
    triggered = trigger(images) if triggered is None else triggered
    logits = forward(model_b, triggered)
    if not 0 <= y_target < _num_classes(model_b, logits):
        raise ContractError(f"y_target {y_target} outside [0, {_num_classes(model_b, logits)})")
    targets = torch.full((logits.shape[0],), y_target, dtype=torch.long, device=logits.device)
    return _finite(F.cross_entropy(logits, targets), 'attack')


def unlearn_loss(model_u: nn.Module, trigger, images: torch.Tensor, labels: torch.Tensor,
                 triggered: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean CE of f_u(G(x)) against the true labels."""
    triggered = trigger(images) if triggered is None else triggered
    return _finite(F.cross_entropy(forward(model_u, triggered), labels), 'unlearn')


def visibility_loss(trigger, images: torch.Tensor, eta: Optional[float] = None,
                    noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean over the batch of ||eta * F(g(x))||_2^2, measured before blur."""
    eta = trigger.config.eta if eta is None else eta
    noise = trigger.noise(images) if noise is None else noise
    return _finite((eta * noise).pow(2).flatten(1).sum(dim=1).mean(), 'visibility')


def non_adv_loss(model_clean: nn.Module, trigger, images: torch.Tensor, labels: torch.Tensor,
                 triggered: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean CE of the clean model on G(x) against the true labels."""
    triggered = trigger(images) if triggered is None else triggered
    return _finite(F.cross_entropy(forward(model_clean, triggered), labels), 'non-adversarial')


@dataclass
class LossBundle:
    """The four loss values, their weights and the weighted total."""
    attack: float
    unlearn: float
    visibility: float
    non_adv: float
    total: float
    weights: LossWeights

    def to_dict(self) -> dict:
        return {
            'loss_attack': self.attack,
            'loss_unlearn': self.unlearn,
            'loss_visibility': self.visibility,
            'loss_non_adv': self.non_adv,
            'loss_total': self.total,
            **asdict(self.weights),
        }


def check_weights(weights: LossWeights):
    for name, value in asdict(weights).items():
        if value < 0:
            raise ContractError(f"loss weight {name} must be >= 0, got {value}")


def weighted_total(attack: Scalar, unlearn: Scalar, visibility: Scalar, non_adv: Scalar,
                   weights: LossWeights) -> Scalar:
    """attack + l_unlearn*unlearn + l_vis*visibility + l_non_adv*non_adv (tensors or floats)."""
    check_weights(weights)
    return (attack + weights.lambda_unlearn * unlearn + weights.lambda_vis * visibility
            + weights.lambda_non_adv * non_adv)


def _value(x: Scalar) -> float:
    return float(x.item()) if isinstance(x, torch.Tensor) else float(x)


def total_generator_loss(attack: Scalar, unlearn: Scalar, visibility: Scalar, non_adv: Scalar,
                         weights: LossWeights) -> LossBundle:
    a, u, v, n = (_value(x) for x in (attack, unlearn, visibility, non_adv))
    return LossBundle(attack=a, unlearn=u, visibility=v, non_adv=n,
                      total=weighted_total(a, u, v, n, weights), weights=weights)
