"""
Alternating bilevel optimization of the trigger generator.

Each outer round:

    1. freeze the generator, rebuild D_b with it, train the surrogate theta_b
       on D_b (warm-started) and simulate unlearning of U to get theta_u;
    2. freeze the three classifiers and run generator steps on the weighted
       sum of the attack, unlearning, visibility and non-adversarial losses,
       projecting the unlearning gradient away from the attack gradient when
       they conflict.

theta_clean is pretrained once and never touched again; the poison set P is
fixed for the whole run, and so is U unless the fixed-partition switch is off.
"""

import copy
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from ..config import ExperimentConfig, UnlearnConfig
from ..data.datasets import LabeledDataset, build_augmentation, make_loader
from ..data.partition import DataPartition, redraw_forget_set
from ..data.poison import MixedDataset, build_poisoned_set
from ..errors import ContractError, NumericalFaultError, TrainingAbortedError
from ..evaluation.metrics import attack_success_rate, benign_accuracy
from ..logger import get_logger
from ..models.classifier import build_classifier
from ..models.snapshot import ParameterSnapshot, differing_tensors, restore, snapshot
from ..models.training import seed_everything, train_classifier
from ..unlearning import UnlearnOutcome, unlearn
from .objectives import (LossBundle, attack_loss, non_adv_loss, total_generator_loss,
                         unlearn_loss, visibility_loss)
from .surgery import (ConflictPoint, ConflictTrace, GradientPair, compose_update, flat_grad,
                      pcgrad_project, safe_cosine, set_flat_grad)
from .trigger import TriggerGenerator

log = get_logger('bilevel')


@contextmanager
def frozen(*modules: nn.Module):
    """Eval mode and no parameter gradients for the duration of the block."""
    saved = [(m, m.training, [p.requires_grad for p in m.parameters()]) for m in modules]
    for m in modules:
        m.eval()
        m.requires_grad_(False)
    try:
        yield
    finally:
        for m, training, flags in saved:
            m.train(training)
            for p, flag in zip(m.parameters(), flags):
                p.requires_grad_(flag)


@dataclass
class SurrogateState:
    """Attacker-side classifiers: frozen clean model, backdoored and unlearned surrogates."""
    model_clean: nn.Module
    theta_clean: ParameterSnapshot
    model_b: nn.Module
    model_u: Optional[nn.Module] = None
    round_index: int = -1

    @classmethod
    def from_clean(cls, model_clean: nn.Module, theta_clean: ParameterSnapshot) -> 'SurrogateState':
        model_clean.eval()
        model_clean.requires_grad_(False)
        model_b = copy.deepcopy(model_clean)
        model_b.requires_grad_(True)
        return cls(model_clean=model_clean, theta_clean=theta_clean, model_b=model_b)

    def check_clean_untouched(self):
        changed = differing_tensors(self.theta_clean, snapshot(self.model_clean, 'clean'))
        if changed:
            raise ContractError("Clean model changed during optimization", {'tensors': changed})


def pretrain_clean(dataset: LabeledDataset, config: ExperimentConfig, epochs: Optional[int] = None,
                   device: Optional[torch.device] = None, dtype: torch.dtype = torch.float32,
                   widths=None, seed: Optional[int] = None,
                   tag: str = "clean") -> Tuple[nn.Module, ParameterSnapshot]:
    """
    Train a classifier on clean data only.

    Returns the model (eval mode) and a 'clean' snapshot whose metadata holds
    the test accuracy. Accuracy below the configured floor only warns.
    """
    seed = config.seed if seed is None else seed
    epochs = config.training.epochs if epochs is None else epochs
    seed_everything(seed)
    model = build_classifier(config.classifier, config.dataset, widths=widths).to(device=device,
                                                                                  dtype=dtype)
    loader = make_loader(dataset.train_images, dataset.train_labels, config.training.batch_size,
                         shuffle=True, seed=seed, transform=build_augmentation(dataset.spec))
    history = train_classifier(model, loader, config.training, epochs,
                               test_set=(dataset.test_images, dataset.test_labels), tag=tag)
    snap = snapshot(model, 'clean', step=epochs, accuracy=history.final_accuracy,
                    losses=history.losses, seed=seed)
    log.info(f"🎓 {tag} model: {history.final_accuracy:.2f}% test accuracy after {epochs} epochs")
    return model, snap


def inner_train_backdoored(state: SurrogateState, trigger: TriggerGenerator,
                           dataset: LabeledDataset, partition: DataPartition, epochs: int,
                           config: ExperimentConfig, seed: int) -> Tuple[ParameterSnapshot, MixedDataset]:
    """SGD on D_b built with the current generator; warm-started unless configured otherwise."""
    with frozen(trigger):
        mixed = build_poisoned_set(dataset, partition, trigger, config.evaluation.batch_size)
    if not config.bilevel.warm_start:
        restore(state.model_b, state.theta_clean)
    state.model_b.requires_grad_(True)
    loader = make_loader(mixed.images, mixed.labels, config.training.batch_size, shuffle=True,
                         seed=seed, transform=build_augmentation(dataset.spec))
    history = train_classifier(state.model_b, loader, config.training, epochs,
                               lr=config.bilevel.classifier_lr, schedule=False, tag="surrogate")
    if history.losses and not np.isfinite(history.losses[-1]):
        raise NumericalFaultError("Surrogate training loss is not finite")
    return snapshot(state.model_b, 'backdoored', step=max(state.round_index, 0)), mixed


def inner_simulate_unlearning(state: SurrogateState, mixed: MixedDataset,
                              unlearn_config: UnlearnConfig) -> UnlearnOutcome:
    """theta_u = F_unlearn(theta_b, U), with U as stored in the current D_b."""
    outcome = unlearn(state.model_b, mixed.forget_set(), unlearn_config)
    outcome.model.requires_grad_(False)
    state.model_u = outcome.model
    return outcome


def outer_generator_step(state: SurrogateState, trigger: TriggerGenerator,
                         optimizer: torch.optim.Optimizer, images: torch.Tensor,
                         labels: torch.Tensor, config: ExperimentConfig, sigma: Optional[float],
                         step: int) -> Tuple[LossBundle, ConflictPoint]:
    """
    One SGD step on the generator.

    g_b and g_u are taken separately, g_u is projected when they conflict and
    PCGrad is on, and the composed gradient is written into .grad before the
    optimizer step.
    """
    if state.model_u is None:
        raise ContractError("outer step needs a simulated unlearned model")
    y_target = config.partition.target_label
    weights = config.loss_weights
    params = [p for p in trigger.parameters() if p.requires_grad]

    with frozen(state.model_clean, state.model_b, state.model_u):
        triggered, noise = trigger.triggered_with_noise(images, sigma)
        l_attack = attack_loss(state.model_b, trigger, images, y_target, triggered)
        l_unlearn = unlearn_loss(state.model_u, trigger, images, labels, triggered)
        l_vis = visibility_loss(trigger, images, noise=noise)
        l_non_adv = non_adv_loss(state.model_clean, trigger, images, labels, triggered)

        g_b = flat_grad(l_attack, params)
        g_u = flat_grad(l_unlearn, params)
        g_vis = flat_grad(l_vis, params)
        g_non_adv = flat_grad(l_non_adv, params, retain_graph=False)

    pair = GradientPair(g_b, g_u)
    g_u_used = pcgrad_project(pair, config.bilevel.alpha) if config.bilevel.use_pcgrad else g_u
    total = compose_update(g_b, g_u_used, weights, g_vis, g_non_adv)
    # last fault check; the generator is untouched when any of them fires
    if not bool(torch.isfinite(total).all()):
        raise NumericalFaultError("Non-finite composed generator gradient")

    optimizer.zero_grad()
    set_flat_grad(params, total)
    optimizer.step()

    bundle = total_generator_loss(l_attack, l_unlearn, l_vis, l_non_adv, weights)
    point = ConflictPoint(step=step, cosine=safe_cosine(g_b, g_u), inner_product=pair.inner,
                          projected=g_u_used is not g_u,
                          inner_after=float(torch.dot(g_b, g_u_used).item()))
    return bundle, point


def probe_cosine(state: SurrogateState, trigger: TriggerGenerator, images: torch.Tensor,
                 labels: torch.Tensor, y_target: int) -> Optional[float]:
    """Cosine between g_b and g_u on a fixed batch with the fixed sigma."""
    params = [p for p in trigger.parameters() if p.requires_grad]
    with frozen(state.model_clean, state.model_b, state.model_u):
        triggered = trigger(images)
        g_b = flat_grad(attack_loss(state.model_b, trigger, images, y_target, triggered), params)
        g_u = flat_grad(unlearn_loss(state.model_u, trigger, images, labels, triggered), params,
                        retain_graph=False)
    return safe_cosine(g_b, g_u)


@dataclass
class BilevelResult:
    """Trained generator plus the per-round log and the conflict trace."""
    trigger: TriggerGenerator
    rounds: List[Dict[str, Any]] = field(default_factory=list)
    steps: List[Dict[str, Any]] = field(default_factory=list)
    trace: Optional[ConflictTrace] = None
    failed_rounds: List[int] = field(default_factory=list)
    skipped_steps: List[int] = field(default_factory=list)

    @property
    def final_round(self) -> Optional[Dict[str, Any]]:
        return self.rounds[-1] if self.rounds else None


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def alternate_optimize(config: ExperimentConfig, dataset: LabeledDataset, partition: DataPartition,
                       model_clean: nn.Module, theta_clean: ParameterSnapshot,
                       trigger: TriggerGenerator,
                       on_step: Optional[Callable[[Dict[str, Any]], None]] = None,
                       on_round: Optional[Callable[[Dict[str, Any], TriggerGenerator], None]] = None,
                       ) -> BilevelResult:
    """
    Run config.bilevel.outer_rounds rounds of inner training/unlearning and
    outer generator steps.

    A numerical fault in one outer step skips that step only. A fault in the
    inner stage, or a round whose every outer step faulted, rolls the whole
    round back; max_consecutive_failures such rounds in a row raise
    TrainingAbortedError. on_step / on_round receive CSV-ready rows, step rows
    only once their round has completed.
    """
    bl = config.bilevel
    seed_everything(config.seed)
    partition.check(dataset.train_labels)
    state = SurrogateState.from_clean(model_clean, theta_clean)
    trace = ConflictTrace(mitigation=bl.mitigation)
    result = BilevelResult(trigger=trigger, trace=trace)
    rng = np.random.default_rng([config.seed, 7])
    optimizer = torch.optim.SGD([p for p in trigger.parameters() if p.requires_grad],
                                lr=bl.generator_lr, momentum=bl.generator_momentum)
    param = next(trigger.parameters())
    device, dtype = param.device, param.dtype

    n_probe = min(bl.probe_batch_size, dataset.num_test)
    probe_x = dataset.test_images[:n_probe].to(device=device, dtype=dtype)
    probe_y = dataset.test_labels[:n_probe].to(device)
    n_eval = min(bl.eval_limit, dataset.num_test)
    eval_x, eval_y = dataset.test_images[:n_eval], dataset.test_labels[:n_eval]

    failures = 0
    step = 0
    log.info(f"🔁 Bilevel optimization: {bl.outer_rounds} rounds, mitigation="
             f"{'on' if bl.mitigation else 'off'} (fixed_partition={bl.fixed_partition}, "
             f"pcgrad={bl.use_pcgrad})")

    for r in range(bl.outer_rounds):
        state.round_index = r
        round_seed = config.seed + r
        round_partition = partition if bl.fixed_partition else redraw_forget_set(partition, r)
        generator_backup = copy.deepcopy(trigger.state_dict())
        optimizer_backup = copy.deepcopy(optimizer.state_dict())
        theta_b_backup = snapshot(state.model_b, 'backdoored', step=r)
        first_step = len(trace.points)
        first_round = len(trace.round_probe)
        step_backup = step
        round_steps: List[Dict[str, Any]] = []
        round_skipped: List[int] = []

        try:
            _, mixed = inner_train_backdoored(state, trigger, dataset, round_partition,
                                              bl.inner_epochs_per_round, config, round_seed)
            outcome = inner_simulate_unlearning(state, mixed, config.simulation_unlearn)

            trigger.train()
            loader = make_loader(dataset.train_images, dataset.train_labels,
                                 config.training.batch_size, shuffle=True, seed=round_seed)
            bundles: List[LossBundle] = []
            for i, (images, labels) in enumerate(loader):
                if bl.outer_steps_per_round is not None and i >= bl.outer_steps_per_round:
                    break
                sigma = trigger.sample_sigma(rng)
                try:
                    bundle, point = outer_generator_step(
                        state, trigger, optimizer, images.to(device=device, dtype=dtype),
                        labels.to(device), config, sigma, step)
                except NumericalFaultError as e:
                    log.warning(f"⚠️ Round {r + 1}, step {step} skipped: {e.message}")
                    round_skipped.append(step)
                    step += 1
                    continue
                trace.add(point)
                bundles.append(bundle)
                round_steps.append({'round': r, 'step': step, 'sigma': sigma, **bundle.to_dict(),
                                    'cosine': point.cosine, 'inner_product': point.inner_product,
                                    'inner_after': point.inner_after, 'projected': point.projected})
                step += 1
            trigger.eval()
            if not bundles:
                raise NumericalFaultError(f"all {len(round_skipped)} outer steps of the round faulted")

            probe = probe_cosine(state, trigger, probe_x, probe_y, config.partition.target_label)
            trace.close_round(probe, first_step)
            target = config.partition.target_label
            round_row = {
                'round': r,
                'forget_round': round_partition.round_index,
                'mitigation': bl.mitigation,
                'steps': len(bundles),
                'skipped_steps': len(round_skipped),
                'loss_attack': _mean([b.attack for b in bundles]),
                'loss_unlearn': _mean([b.unlearn for b in bundles]),
                'loss_visibility': _mean([b.visibility for b in bundles]),
                'loss_non_adv': _mean([b.non_adv for b in bundles]),
                'loss_total': _mean([b.total for b in bundles]),
                'cosine_probe': probe,
                'cosine_step_mean': trace.round_step_mean[-1],
                'surrogate_asr': attack_success_rate(state.model_b, trigger, eval_x, eval_y, target,
                                                     config.evaluation.batch_size),
                'surrogate_asr_u': attack_success_rate(state.model_u, trigger, eval_x, eval_y,
                                                       target, config.evaluation.batch_size),
                'surrogate_ba': benign_accuracy(state.model_b, eval_x, eval_y,
                                                config.evaluation.batch_size),
                'forget_loss_before': outcome.loss_before,
                'forget_loss_after': outcome.loss_after,
                'unlearn_diverged': outcome.diverged,
                'unlearn_monotone': outcome.monotone,
            }
            result.rounds.append(round_row)
            result.steps.extend(round_steps)
            result.skipped_steps.extend(round_skipped)
            if on_step:
                for row in round_steps:
                    on_step(row)
            failures = 0
            probe_text = "n/a" if probe is None else f"{probe:+.3f}"
            log.info(f"Round {r + 1}/{bl.outer_rounds}: ASR {round_row['surrogate_asr']:.1f}% -> "
                     f"ASR-U {round_row['surrogate_asr_u']:.1f}%, cos {probe_text}, "
                     f"loss {round_row['loss_total']:.4f}")
            if on_round:
                on_round(round_row, trigger)
        except NumericalFaultError as e:
            failures += 1
            result.failed_rounds.append(r)
            trigger.load_state_dict(generator_backup)
            optimizer.load_state_dict(optimizer_backup)
            restore(state.model_b, theta_b_backup)
            trace.rollback(first_step, first_round)
            step = step_backup
            log.error(f"❌ Round {r + 1} failed ({failures} in a row): {e.message}")
            if failures >= bl.max_consecutive_failures:
                raise TrainingAbortedError(
                    f"Bilevel optimization aborted after {failures} consecutive failed rounds",
                    {'failed_rounds': result.failed_rounds})

    state.check_clean_untouched()
    if trace.missing:
        log.warning(f"⚠️ {trace.missing} steps had an undefined cosine (zero gradient)")
    trigger.eval()
    return result
