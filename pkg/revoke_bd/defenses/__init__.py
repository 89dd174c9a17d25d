"""Defense-side harnesses: fine-pruning sweep and STRIP entropy."""

from .fine_pruning import PruneCurve, PrunePoint, channel_activation, default_prune_steps, fine_prune
from .strip import StripReport, overlap_coefficient, strip_entropy, strip_report

__all__ = ['PruneCurve', 'PrunePoint', 'channel_activation', 'default_prune_steps', 'fine_prune',
           'StripReport', 'overlap_coefficient', 'strip_entropy', 'strip_report']
