"""Trigger generation: DCT filtering, the trigger function, losses, gradient surgery, bilevel loop."""

from .bilevel import BilevelResult, SurrogateState, alternate_optimize, pretrain_clean
from .frequency import FrequencyMask, dct2, filter_noise, idct2
from .objectives import (LossBundle, attack_loss, non_adv_loss, total_generator_loss,
                         unlearn_loss, visibility_loss)
from .surgery import ConflictTrace, GradientPair, compose_update, cosine, pcgrad_project
from .trigger import TriggerGenerator, apply_trigger

__all__ = [
    'BilevelResult', 'SurrogateState', 'alternate_optimize', 'pretrain_clean',
    'FrequencyMask', 'dct2', 'filter_noise', 'idct2',
    'LossBundle', 'attack_loss', 'non_adv_loss', 'total_generator_loss', 'unlearn_loss',
    'visibility_loss',
    'ConflictTrace', 'GradientPair', 'compose_update', 'cosine', 'pcgrad_project',
    'TriggerGenerator', 'apply_trigger',
]
