"""
Training substrate shared by every stage: checked forward pass, layer-masked
SGD step, full classifier training and batched prediction.
"""

import random
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import TrainingConfig
from ..errors import ContractError, NumericalFaultError, TrainingFailureWarning
from ..logger import get_logger

log = get_logger('models')


def resolve_device(name: str = "auto") -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def resolve_dtype(precision: str) -> torch.dtype:
    return torch.float64 if precision == "float64" else torch.float32


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def forward(model: nn.Module, images: torch.Tensor) -> torch.Tensor:
    """Logits for a batch, with shape and finiteness checks on both ends."""
    expected = getattr(model, 'input_shape', None)
    if images.dim() < 2 or (expected is not None and tuple(images.shape[1:]) != tuple(expected)):
        raise ContractError(f"batch shape {tuple(images.shape)} does not match model input "
                            f"{expected}")
    if not bool(torch.isfinite(images).all()):
        raise NumericalFaultError("Non-finite values in model input")
    logits = model(images)
    if not bool(torch.isfinite(logits).all()):
        raise NumericalFaultError("Model produced non-finite logits")
    return logits


def select_parameters(model: nn.Module,
                      layer_mask: Optional[Sequence[str]] = None) -> List[Tuple[str, nn.Parameter]]:
    """Named parameters restricted to layer_mask (all of them when None)."""
    named = list(model.named_parameters())
    if layer_mask is None:
        return named
    wanted = set(layer_mask)
    unknown = wanted - {name for name, _ in named}
    if unknown:
        raise ContractError(f"layer mask names unknown parameters: {sorted(unknown)}")
    return [(name, p) for name, p in named if name in wanted]


def sgd_step(model: nn.Module, images: torch.Tensor, labels: torch.Tensor, learning_rate: float,
             layer_mask: Optional[Sequence[str]] = None) -> float:
    """
    One plain SGD step on the mean cross-entropy of the batch.

    Only parameters named in layer_mask move; the rest are untouched bitwise.
    Returns the pre-step loss.
    """
    if images.shape[0] == 0:
        raise ContractError("sgd_step on an empty batch")
    if learning_rate < 0:
        raise ContractError(f"learning_rate must be >= 0, got {learning_rate}")
    selected = select_parameters(model, layer_mask)
    loss = F.cross_entropy(forward(model, images), labels)
    if not bool(torch.isfinite(loss)):
        raise NumericalFaultError("Non-finite training loss")
    grads = torch.autograd.grad(loss, [p for _, p in selected])
    with torch.no_grad():
        for (_, p), g in zip(selected, grads):
            p.sub_(learning_rate * g)
    return float(loss.item())


@torch.no_grad()
def predict(model: nn.Module, images: torch.Tensor, batch_size: int = 256,
            device: Optional[torch.device] = None) -> torch.Tensor:
    """Eval-mode argmax predictions (on CPU)."""
    was_training = model.training
    model.eval()
    param = next(model.parameters())
    device = device or param.device
    preds = []
    for i in range(0, images.shape[0], batch_size):
        logits = forward(model, images[i:i + batch_size].to(device=device, dtype=param.dtype))
        preds.append(logits.argmax(dim=1).cpu())
    model.train(was_training)
    return torch.cat(preds) if preds else torch.empty(0, dtype=torch.long)


@torch.no_grad()
def accuracy(model: nn.Module, images: torch.Tensor, labels: torch.Tensor,
             batch_size: int = 256) -> float:
    if labels.numel() == 0:
        raise ContractError("accuracy over an empty set")
    preds = predict(model, images, batch_size)
    return 100.0 * float((preds == labels).sum().item()) / labels.numel()


@dataclass
class TrainingHistory:
    """Per-epoch mean loss and (optional) test accuracy of a training run."""
    losses: List[float] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.accuracies[-1] if self.accuracies else None


def train_classifier(model: nn.Module, loader, config: TrainingConfig, epochs: int,
                     lr: Optional[float] = None, schedule: bool = True,
                     test_set: Optional[Tuple[torch.Tensor, torch.Tensor]] = None,
                     tag: str = "classifier") -> TrainingHistory:
    """
    Momentum SGD with weight decay over `loader` for `epochs` epochs.

    With schedule=True the learning rate drops x0.1 at 50% and 75% of the
    epochs. Non-finite losses raise NumericalFaultError. When test_set is given
    the accuracy is checked against config.accuracy_floor at the end.
    """
    history = TrainingHistory()
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr if lr is None else lr,
                                momentum=config.momentum,
                                weight_decay=config.weight_decay)
    scheduler = None
    if schedule and epochs > 0:
        milestones = sorted({max(1, int(epochs * 0.5)), max(1, int(epochs * 0.75))})
        scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=milestones, gamma=0.1)

    for epoch in range(epochs):
        model.train()
        total, count = 0.0, 0
        for images, labels in loader:
            images = images.to(device=device, dtype=dtype)
            labels = labels.to(device)
            optimizer.zero_grad()
            loss = F.cross_entropy(forward(model, images), labels)
            if not bool(torch.isfinite(loss)):
                raise NumericalFaultError(f"{tag}: non-finite loss in epoch {epoch + 1}")
            loss.backward()
            optimizer.step()
            total += float(loss.item()) * labels.shape[0]
            count += labels.shape[0]
        if scheduler is not None:
            scheduler.step()
        history.losses.append(total / max(count, 1))
        if test_set is not None:
            history.accuracies.append(accuracy(model, *test_set))
        log.debug(f"{tag} epoch {epoch + 1}/{epochs}: loss={history.losses[-1]:.4f}")

    model.eval()
    if test_set is not None:
        if not history.accuracies:
            history.accuracies.append(accuracy(model, *test_set))
        acc = history.final_accuracy
        if acc < config.accuracy_floor and epochs > 0:
            message = f"{tag} finished at {acc:.2f}% accuracy, below the {config.accuracy_floor:.0f}% floor"
            log.warning(f"⚠️ {message}")
            warnings.warn(message, TrainingFailureWarning)
    return history
