"""
Approximate unlearning of a forget set.

Both methods run gradient ascent on the summed cross-entropy of the forget
samples and only touch the trailing `layer_suffix_count` parameter tensors:

    first_order:  one step  theta_u = theta_b + tau * grad sum L(f(z), y)
    unroll_sgd:   `epochs` passes of per-minibatch ascent steps, fixed order

The network is kept in eval mode throughout, so BatchNorm statistics do not
move and the result is a pure function of (theta_b, forget set, config).
"""

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import UnlearnConfig
from .errors import ContractError, NumericalFaultError
from .evaluation.metrics import attack_success_rate, benign_accuracy
from .logger import get_logger
from .models.classifier import trailing_parameter_names
from .models.training import forward, select_parameters

log = get_logger('unlearn')

ForgetSet = Tuple[torch.Tensor, torch.Tensor]


@dataclass
class UnlearnOutcome:
    """Unlearned copy of the model plus what happened to the forget loss."""
    model: nn.Module
    method: str
    loss_before: float
    loss_after: float
    steps: int
    changed: List[str] = field(default_factory=list)
    diverged: bool = False

    @property
    def monotone(self) -> bool:
        return self.loss_after >= self.loss_before


def _batches(forget_set: ForgetSet, batch_size: int) -> List[ForgetSet]:
    images, labels = forget_set
    if images.shape[0] == 0:
        raise ContractError("Forget set is empty")
    if images.shape[0] != labels.shape[0]:
        raise ContractError("Forget images and labels differ in length")
    return [(images[i:i + batch_size], labels[i:i + batch_size])
            for i in range(0, images.shape[0], batch_size)]


def _to_model(model: nn.Module, images: torch.Tensor, labels: torch.Tensor):
    p = next(model.parameters())
    return images.to(device=p.device, dtype=p.dtype), labels.to(p.device)


@torch.no_grad()
def forget_loss(model: nn.Module, forget_set: ForgetSet, batch_size: int = 256) -> float:
    """Mean cross-entropy over the forget set (eval mode)."""
    total, count = 0.0, 0
    for images, labels in _batches(forget_set, batch_size):
        images, labels = _to_model(model, images, labels)
        total += float(F.cross_entropy(forward(model, images), labels, reduction='sum').item())
        count += labels.shape[0]
    return total / count


def _ascent_step(model: nn.Module, batches: Sequence[ForgetSet], params: List[nn.Parameter],
                 step_size: float):
    """params += tau * grad of the summed CE over all given batches."""
    grads = [torch.zeros_like(p) for p in params]
    for images, labels in batches:
        images, labels = _to_model(model, images, labels)
        loss = F.cross_entropy(forward(model, images), labels, reduction='sum')
        for acc, g in zip(grads, torch.autograd.grad(loss, params)):
            acc.add_(g)
    if not all(bool(torch.isfinite(g).all()) for g in grads):
        raise NumericalFaultError("Non-finite unlearning gradient")
    with torch.no_grad():
        for p, g in zip(params, grads):
            p.add_(step_size * g)


def _prepare(model_b: nn.Module, config: UnlearnConfig):
    if config.step_size < 0:
        raise ContractError(f"step_size must be >= 0, got {config.step_size}")
    model = copy.deepcopy(model_b)
    model.eval()
    names = trailing_parameter_names(model, config.layer_suffix_count)
    params = [p.requires_grad_(True) for _, p in select_parameters(model, names)]
    return model, names, params


def _divergence_limit(model: nn.Module, config: UnlearnConfig) -> float:
    num_classes = getattr(model, 'num_classes', None) or 10
    return config.divergence_factor * math.log(num_classes)


def first_order_unlearn(model_b: nn.Module, forget_set: ForgetSet,
                        config: UnlearnConfig) -> UnlearnOutcome:
    """Single ascent step of size tau on the whole forget set."""
    batches = _batches(forget_set, config.batch_size)
    model, names, params = _prepare(model_b, config)
    before = forget_loss(model, forget_set, config.batch_size)
    _ascent_step(model, batches, params, config.step_size)
    after = forget_loss(model, forget_set, config.batch_size)
    diverged = after > _divergence_limit(model, config)
    if diverged:
        log.warning(f"⚠️ First-order unlearning pushed forget loss to {after:.3f}")
    return UnlearnOutcome(model=model, method='first_order', loss_before=before,
                          loss_after=after, steps=1, changed=names, diverged=diverged)


def unroll_sgd_unlearn(model_b: nn.Module, forget_set: ForgetSet, config: UnlearnConfig,
                       epochs: Optional[int] = None) -> UnlearnOutcome:
    """
    Multi-epoch gradient ascent over forget-set minibatches.

    Stops early (and flags it) once the forget loss exceeds
    divergence_factor * ln(num_classes).
    """
    epochs = config.epochs if epochs is None else epochs
    if epochs < 0:
        raise ContractError(f"epochs must be >= 0, got {epochs}")
    batches = _batches(forget_set, config.batch_size)
    model, names, params = _prepare(model_b, config)
    limit = _divergence_limit(model, config)
    before = forget_loss(model, forget_set, config.batch_size)
    after, steps, diverged = before, 0, False

    for epoch in range(epochs):
        for batch in batches:
            _ascent_step(model, [batch], params, config.step_size)
            steps += 1
        after = forget_loss(model, forget_set, config.batch_size)
        if after > limit:
            diverged = True
            log.warning(f"⚠️ Unroll-SGD diverging after epoch {epoch + 1}: forget loss "
                        f"{after:.3f} > {limit:.3f}, stopping")
            break

    outcome = UnlearnOutcome(model=model, method='unroll_sgd', loss_before=before,
                             loss_after=after, steps=steps, changed=names if steps else [],
                             diverged=diverged)
    if not outcome.monotone:
        log.warning(f"⚠️ Unroll-SGD lowered the forget loss ({before:.4f} -> {after:.4f})")
    return outcome


def unlearn(model_b: nn.Module, forget_set: ForgetSet, config: UnlearnConfig) -> UnlearnOutcome:
    """Dispatch on config.method."""
    if config.method == 'first_order':
        return first_order_unlearn(model_b, forget_set, config)
    if config.method == 'unroll_sgd':
        return unroll_sgd_unlearn(model_b, forget_set, config)
    raise ContractError(f"Unknown unlearning method '{config.method}'")


@dataclass
class RevocationReport:
    """Outcome of a revocation request against the victim."""
    method: str
    step_size: float
    epochs: int
    layer_suffix_count: int
    num_forget: int
    asr: float
    asr_u: float
    ba: float
    ba_u: float
    forget_loss_before: float
    forget_loss_after: float
    diverged: bool = False
    monotone: bool = True

    @property
    def delta(self) -> float:
        return self.asr_u - self.asr

    def to_dict(self) -> dict:
        return {**asdict(self), 'delta': self.delta}


def revocation_forget_set(dataset, partition, trigger, batch_size: int = 256) -> ForgetSet:
    """(G(x), y) for the forget indices, in the dataset's dtype like the D_b entries."""
    idx = torch.tensor(partition.forget_indices, dtype=torch.long)
    images = dataset.train_images[idx]
    was_training = trigger.training
    trigger.eval()
    triggered = trigger.apply_batched(images, batch_size).to(dtype=images.dtype,
                                                            device=images.device)
    trigger.train(was_training)
    return triggered, dataset.train_labels[idx]


def revoke(victim: nn.Module, dataset, partition, trigger, config: UnlearnConfig,
           batch_size: int = 256) -> Tuple[nn.Module, RevocationReport]:
    """
    Unlearn the forget set from the victim and measure ASR/BA before and after.

    The forget set is (G(x), y) for the partition's forget indices, built with
    the trigger in eval mode, i.e. exactly the entries stored in D_b.
    """
    idx = torch.tensor(partition.forget_indices, dtype=torch.long)
    forget_set = revocation_forget_set(dataset, partition, trigger, batch_size)
    test_x, test_y = dataset.test_images, dataset.test_labels
    target = partition.target_label

    asr = attack_success_rate(victim, trigger, test_x, test_y, target, batch_size)
    ba = benign_accuracy(victim, test_x, test_y, batch_size)
    outcome = unlearn(victim, forget_set, config)
    asr_u = attack_success_rate(outcome.model, trigger, test_x, test_y, target, batch_size)
    ba_u = benign_accuracy(outcome.model, test_x, test_y, batch_size)

    report = RevocationReport(
        method=config.method,
        step_size=config.step_size,
        epochs=config.epochs if config.method == 'unroll_sgd' else 1,
        layer_suffix_count=config.layer_suffix_count,
        num_forget=int(idx.numel()),
        asr=asr, asr_u=asr_u, ba=ba, ba_u=ba_u,
        forget_loss_before=outcome.loss_before,
        forget_loss_after=outcome.loss_after,
        diverged=outcome.diverged,
        monotone=outcome.monotone,
    )
    log.info(f"🧹 Revoked with {config.method}: ASR {asr:.2f} -> {asr_u:.2f}, "
             f"BA {ba:.2f} -> {ba_u:.2f}")
    return outcome.model, report
