"""
Headline metrics: attack success rate and benign accuracy, before and after
unlearning.

ASR is measured only over test samples whose true label differs from the
target; samples already of the target class would count as hits for free.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import torch
import torch.nn as nn

from ..errors import ContractError
from ..models.training import predict


def asr_from_predictions(predictions: torch.Tensor, labels: torch.Tensor, y_target: int) -> float:
    """100 * hits / eligible, eligible = samples whose true label is not y_target."""
    eligible = labels != y_target
    count = int(eligible.sum().item())
    if count == 0:
        raise ContractError(f"No test samples outside target class {y_target}")
    hits = int((predictions[eligible] == y_target).sum().item())
    return 100.0 * hits / count


def attack_success_rate(model: nn.Module, trigger, images: torch.Tensor, labels: torch.Tensor,
                        y_target: int, batch_size: int = 256) -> float:
    """ASR of `model` on G(x) for the non-target test samples (fixed sigma)."""
    eligible = labels != y_target
    if not bool(eligible.any()):
        raise ContractError(f"No test samples outside target class {y_target}")
    triggered = trigger.apply_batched(images[eligible], batch_size)
    preds = predict(model, triggered, batch_size)
    return asr_from_predictions(preds, labels[eligible], y_target)


def benign_accuracy(model: nn.Module, images: torch.Tensor, labels: torch.Tensor,
                    batch_size: int = 256) -> float:
    """Top-1 accuracy on untriggered inputs."""
    if labels.numel() == 0:
        raise ContractError("benign accuracy over an empty set")
    preds = predict(model, images, batch_size)
    return 100.0 * int((preds == labels).sum().item()) / labels.numel()


@dataclass
class MetricsReport:
    """ASR / ASR-U / BA / BA-U of one attack -> revoke run."""
    asr: float
    asr_u: float
    ba: float
    ba_u: float
    dataset: str = ""
    simulation_method: str = ""
    revocation_method: str = ""
    seed: int = 0
    config_hash: str = ""
    asr_excludes_target: bool = True
    clean_accuracy: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ('asr', 'asr_u', 'ba', 'ba_u'):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise ContractError(f"{name} = {value} is outside [0, 100]")

    @property
    def delta(self) -> float:
        return self.asr_u - self.asr

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['delta'] = self.delta
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricsReport':
        data = {k: v for k, v in data.items() if k != 'delta'}
        return cls(**data)
