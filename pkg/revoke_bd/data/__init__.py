"""Datasets, the deterministic poison/forget partition and the poisoned training set."""

from .datasets import (
    AugmentedTensorDataset,
    LabeledDataset,
    build_augmentation,
    denormalize,
    load_dataset,
    make_loader,
    normalize,
    stratified_indices,
)
from .partition import DataPartition, make_partition, poison_count, redraw_forget_set
from .poison import MixedDataset, build_poisoned_set

__all__ = [
    'AugmentedTensorDataset', 'LabeledDataset', 'build_augmentation', 'denormalize',
    'load_dataset', 'make_loader', 'normalize', 'stratified_indices',
    'DataPartition', 'make_partition', 'poison_count', 'redraw_forget_set',
    'MixedDataset', 'build_poisoned_set',
]
