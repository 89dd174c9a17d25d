"""
Attack -> revoke protocol.

    prepare         load the dataset and draw the partition
    train_clean     attacker's clean model theta_clean (surrogate architecture)
    train_trigger   bilevel optimization of the generator
    inject_backdoor fresh victim trained on D_b with its own seed
    revoke          unlearning request against the victim

full_protocol chains them; cross_method_grid, sweep and ablation rerun the
parts that depend on what they vary and reuse the rest.
"""

import copy
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from ..attack.bilevel import BilevelResult, alternate_optimize, pretrain_clean
from ..attack.trigger import TriggerGenerator
from ..config import UNLEARN_METHODS, ExperimentConfig, UnlearnConfig
from ..data.datasets import LabeledDataset, build_augmentation, load_dataset, make_loader
from ..data.partition import DataPartition, make_partition
from ..data.poison import MixedDataset, build_poisoned_set
from ..errors import ConfigError, ContractError, RevokeBDError
from ..logger import get_logger
from ..models.classifier import build_classifier
from ..models.generator import build_generator
from ..models.snapshot import ParameterSnapshot
from ..models.training import resolve_device, resolve_dtype, seed_everything, train_classifier
from ..unlearning import RevocationReport, revoke
from .metrics import MetricsReport, attack_success_rate, benign_accuracy

log = get_logger('protocol')

SWEEP_PARAMETERS = ('rho_p', 'eta')
ABLATION_VARIANTS = ('Ours', 'w/o Unlearn', 'w/o Mitigation')


@dataclass
class ProtocolContext:
    """Everything a protocol stage needs besides models."""
    config: ExperimentConfig
    dataset: LabeledDataset
    partition: DataPartition
    device: torch.device
    dtype: torch.dtype


@dataclass
class VictimResult:
    model: nn.Module
    mixed: MixedDataset
    asr: float
    ba: float
    seed: int


def prepare(config: ExperimentConfig, dataset: Optional[LabeledDataset] = None) -> ProtocolContext:
    config.validate()
    dataset = dataset or load_dataset(config.dataset, seed=config.seed)
    p = config.partition
    partition = make_partition(dataset, p.target_label, p.rho_p, p.rho_f_count, config.seed)
    log.info(f"🎯 Partition: |P|={partition.num_poison}, |U|={partition.num_forget}, "
             f"target={partition.target_label}")
    return ProtocolContext(config=config, dataset=dataset, partition=partition,
                           device=resolve_device(config.device),
                           dtype=resolve_dtype(config.precision))


def with_config(ctx: ProtocolContext, config: ExperimentConfig) -> ProtocolContext:
    """Same dataset, partition redrawn for the new config (cheap)."""
    return prepare(config, dataset=ctx.dataset) if config.dataset == ctx.config.dataset else prepare(config)


def train_clean(ctx: ProtocolContext) -> Tuple[nn.Module, ParameterSnapshot]:
    return pretrain_clean(ctx.dataset, ctx.config, device=ctx.device, dtype=ctx.dtype,
                          widths=ctx.config.bilevel.surrogate_widths)


def build_trigger(config: ExperimentConfig, dataset: LabeledDataset, device=None,
                  dtype: torch.dtype = torch.float32) -> TriggerGenerator:
    """Freshly initialized generator (seeded by config.seed)."""
    torch.manual_seed(config.seed)
    net = build_generator(config.generator, channels=dataset.image_shape[0])
    trigger = TriggerGenerator(net, config.trigger, dataset.image_shape,
                               clamp_range=tuple(b.squeeze(0) for b in dataset.clamp_range))
    return trigger.to(device=device, dtype=dtype)


def train_trigger(ctx: ProtocolContext, model_clean: nn.Module, theta_clean: ParameterSnapshot,
                  on_step: Optional[Callable] = None, on_round: Optional[Callable] = None
                  ) -> BilevelResult:
    trigger = build_trigger(ctx.config, ctx.dataset, ctx.device, ctx.dtype)
    return alternate_optimize(ctx.config, ctx.dataset, ctx.partition, copy.deepcopy(model_clean),
                              theta_clean, trigger, on_step=on_step, on_round=on_round)


def inject_backdoor(ctx: ProtocolContext, trigger: TriggerGenerator) -> VictimResult:
    """Train a fresh victim from scratch on D_b and measure ASR/BA."""
    config = ctx.config
    seed = config.seed + config.evaluation.victim_seed_offset
    trigger.eval()
    mixed = build_poisoned_set(ctx.dataset, ctx.partition, trigger, config.evaluation.batch_size)
    seed_everything(seed)
    victim = build_classifier(config.classifier, config.dataset).to(device=ctx.device, dtype=ctx.dtype)
    loader = make_loader(mixed.images, mixed.labels, config.training.batch_size, shuffle=True,
                         seed=seed, transform=build_augmentation(ctx.dataset.spec))
    train_classifier(victim, loader, config.training, config.training.epochs,
                     test_set=(ctx.dataset.test_images, ctx.dataset.test_labels), tag="victim")
    bs = config.evaluation.batch_size
    asr = attack_success_rate(victim, trigger, ctx.dataset.test_images, ctx.dataset.test_labels,
                              ctx.partition.target_label, bs)
    ba = benign_accuracy(victim, ctx.dataset.test_images, ctx.dataset.test_labels, bs)
    log.info(f"💉 Victim (seed {seed}) trained on D_b: ASR {asr:.2f}%, BA {ba:.2f}%")
    return VictimResult(model=victim, mixed=mixed, asr=asr, ba=ba, seed=seed)


def revoke_victim(ctx: ProtocolContext, victim: nn.Module, trigger: TriggerGenerator,
                  unlearn_config: Optional[UnlearnConfig] = None) -> Tuple[nn.Module, RevocationReport]:
    return revoke(victim, ctx.dataset, ctx.partition, trigger,
                  unlearn_config or ctx.config.evaluation_unlearn, ctx.config.evaluation.batch_size)


def make_report(ctx: ProtocolContext, report: RevocationReport, clean_accuracy: Optional[float] = None,
                simulation_method: Optional[str] = None, **extra) -> MetricsReport:
    config = ctx.config
    return MetricsReport(
        asr=report.asr, asr_u=report.asr_u, ba=report.ba, ba_u=report.ba_u,
        dataset=config.dataset.name,
        simulation_method=simulation_method or config.simulation_unlearn.method,
        revocation_method=report.method,
        seed=config.seed,
        config_hash=config.config_hash(),
        asr_excludes_target=config.evaluation.exclude_target_from_asr,
        clean_accuracy=clean_accuracy,
        extra={'num_poison': ctx.partition.num_poison, 'num_forget': report.num_forget,
               'forget_loss_before': report.forget_loss_before,
               'forget_loss_after': report.forget_loss_after,
               'unlearn_diverged': report.diverged,
               'unlearn_monotone': report.monotone, **extra},
    )


def full_protocol(config: ExperimentConfig, ctx: Optional[ProtocolContext] = None,
                  clean: Optional[Tuple[nn.Module, ParameterSnapshot]] = None,
                  trigger: Optional[TriggerGenerator] = None,
                  on_round: Optional[Callable] = None) -> MetricsReport:
    """
    Trigger generation, backdoor injection and revocation in one go.

    Pretrained pieces can be passed in (clean model, trained trigger) and are
    used as-is.
    """
    ctx = ctx or prepare(config)
    model_clean, theta_clean = clean or train_clean(ctx)
    if trigger is None:
        trigger = train_trigger(ctx, model_clean, theta_clean, on_round=on_round).trigger
    victim = inject_backdoor(ctx, trigger)
    _, report = revoke_victim(ctx, victim.model, trigger)
    return make_report(ctx, report, clean_accuracy=theta_clean.metadata.get('accuracy'),
                       eta=config.trigger.eta, rho_p=config.partition.rho_p)


def _with_methods(config: ExperimentConfig, simulation: Optional[str] = None,
                  revocation: Optional[str] = None) -> ExperimentConfig:
    clone = config.copy()
    if simulation:
        clone.simulation_unlearn.method = simulation
    if revocation:
        clone.evaluation_unlearn.method = revocation
    return clone


def cross_method_grid(config: ExperimentConfig, ctx: Optional[ProtocolContext] = None,
                      clean: Optional[Tuple[nn.Module, ParameterSnapshot]] = None,
                      methods: Sequence[str] = UNLEARN_METHODS
                      ) -> Dict[Tuple[str, str], MetricsReport]:
    """Every (simulation method, revocation method) pair; one trigger and victim per simulation method."""
    ctx = ctx or prepare(config)
    model_clean, theta_clean = clean or train_clean(ctx)
    grid: Dict[Tuple[str, str], MetricsReport] = {}
    for sim in methods:
        sim_ctx = ProtocolContext(**{**vars(ctx), 'config': _with_methods(config, simulation=sim)})
        log.info(f"🧪 Grid row: simulate with {sim}")
        trigger = train_trigger(sim_ctx, model_clean, theta_clean).trigger
        victim = inject_backdoor(sim_ctx, trigger)
        for rev in methods:
            rev_ctx = ProtocolContext(**{**vars(sim_ctx),
                                         'config': _with_methods(sim_ctx.config, revocation=rev)})
            _, report = revoke_victim(rev_ctx, victim.model, trigger)
            grid[(sim, rev)] = make_report(rev_ctx, report, theta_clean.metadata.get('accuracy'),
                                           simulation_method=sim)
    return grid


@dataclass
class SweepCell:
    value: float
    report: Optional[MetricsReport] = None
    error: Optional[str] = None


@dataclass
class SweepTable:
    parameter: str
    cells: List[SweepCell] = field(default_factory=list)

    @property
    def gaps(self) -> List[float]:
        return [c.value for c in self.cells if c.report is None]


def apply_sweep_value(config: ExperimentConfig, parameter: str, value: float) -> ExperimentConfig:
    clone = config.copy()
    if parameter == 'rho_p':
        clone.partition.rho_p = float(value)
    elif parameter == 'eta':
        clone.trigger.eta = float(value)
    else:
        raise ConfigError(f"Cannot sweep '{parameter}'", {'allowed': SWEEP_PARAMETERS})
    return clone


def sweep(config: ExperimentConfig, parameter: str, values: Sequence[float],
          ctx: Optional[ProtocolContext] = None,
          clean: Optional[Tuple[nn.Module, ParameterSnapshot]] = None) -> SweepTable:
    """
    One full_protocol run per value (values ascending).

    A failing cell is recorded as a gap and the sweep moves on.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"Cannot sweep '{parameter}'", {'allowed': SWEEP_PARAMETERS})
    if not values or list(values) != sorted(values):
        raise ContractError("Sweep values must be non-empty and ascending", {'values': list(values)})
    ctx = ctx or prepare(config)
    clean = clean or train_clean(ctx)
    table = SweepTable(parameter=parameter)
    for value in values:
        cell_config = apply_sweep_value(config, parameter, value)
        log.info(f"📈 Sweep {parameter}={value}")
        try:
            cell_config.validate()
            cell_ctx = with_config(ctx, cell_config)
            report = full_protocol(cell_config, cell_ctx, clean=clean)
            report.extra[parameter] = float(value)
            table.cells.append(SweepCell(value=float(value), report=report))
        except RevokeBDError as e:
            log.error(f"❌ Sweep cell {parameter}={value} failed: {e.message}")
            table.cells.append(SweepCell(value=float(value), error=e.message))
    return table


def ablation_config(config: ExperimentConfig, variant: str) -> ExperimentConfig:
    clone = config.copy()
    if variant == 'Ours':
        pass
    elif variant == 'w/o Unlearn':
        clone.loss_weights.lambda_unlearn = 0.0
        clone.bilevel.fixed_partition = False
        clone.bilevel.use_pcgrad = False
    elif variant == 'w/o Mitigation':
        clone.bilevel.fixed_partition = False
        clone.bilevel.use_pcgrad = False
    else:
        raise ConfigError(f"Unknown ablation variant '{variant}'", {'allowed': ABLATION_VARIANTS})
    return clone


def ablation(config: ExperimentConfig, ctx: Optional[ProtocolContext] = None,
             clean: Optional[Tuple[nn.Module, ParameterSnapshot]] = None,
             variants: Sequence[str] = ABLATION_VARIANTS,
             on_round: Optional[Callable[[str, Dict[str, Any]], None]] = None
             ) -> Dict[str, MetricsReport]:
    """Full method, without the unlearning loss, and without mitigation."""
    ctx = ctx or prepare(config)
    clean = clean or train_clean(ctx)
    results: Dict[str, MetricsReport] = {}
    for variant in variants:
        variant_config = ablation_config(config, variant)
        log.info(f"🧩 Ablation: {variant}")
        variant_ctx = ProtocolContext(**{**vars(ctx), 'config': variant_config})
        hook = (lambda row, _trigger, v=variant: on_round(v, row)) if on_round else None
        report = full_protocol(variant_config, variant_ctx, clean=clean, on_round=hook)
        report.extra['variant'] = variant
        results[variant] = report
    return results
