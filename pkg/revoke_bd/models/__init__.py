"""Classifier and generator networks plus the training/snapshot substrate."""

from .classifier import PreActResNet, build_classifier, trailing_parameter_names
from .generator import GeneratorNet, build_generator
from .snapshot import (
    ParameterSnapshot,
    differing_tensors,
    load_checkpoint,
    restore,
    save_checkpoint,
    snapshot,
)
from .training import (
    accuracy,
    forward,
    predict,
    resolve_device,
    resolve_dtype,
    seed_everything,
    sgd_step,
    train_classifier,
)

__all__ = [
    'PreActResNet', 'build_classifier', 'trailing_parameter_names',
    'GeneratorNet', 'build_generator',
    'ParameterSnapshot', 'differing_tensors', 'load_checkpoint', 'restore',
    'save_checkpoint', 'snapshot',
    'accuracy', 'forward', 'predict', 'resolve_device', 'resolve_dtype',
    'seed_everything', 'sgd_step', 'train_classifier',
]
