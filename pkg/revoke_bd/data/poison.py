"""
Mixed (poisoned) training set D_b = (D \\ P) U P'.

Entries at the poison indices carry the triggered image with their original
label; every other entry is the untouched original.
"""

from dataclasses import dataclass
from typing import Tuple

import torch

from ..errors import ContractError, PartitionIndexError
from ..logger import get_logger
from .datasets import LabeledDataset
from .partition import DataPartition

log = get_logger('data')


@dataclass(frozen=True, eq=False)
class MixedDataset:
    """Training images with the poison set replaced by G(x); labels untouched."""
    images: torch.Tensor
    labels: torch.Tensor
    is_poisoned: torch.Tensor
    partition: DataPartition
    trigger_id: str

    @property
    def num_poisoned(self) -> int:
        return int(self.is_poisoned.sum().item())

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def forget_set(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """(G(x), y) for the forget indices, exactly as stored."""
        idx = torch.tensor(self.partition.forget_indices, dtype=torch.long)
        return self.images[idx], self.labels[idx]

    def poison_set(self) -> Tuple[torch.Tensor, torch.Tensor]:
        idx = torch.tensor(self.partition.poison_indices, dtype=torch.long)
        return self.images[idx], self.labels[idx]


def build_poisoned_set(dataset: LabeledDataset, partition: DataPartition, trigger,
                       batch_size: int = 256) -> MixedDataset:
    """
    Replace the poison entries by their triggered versions.

    `trigger` is a TriggerGenerator; it is switched to eval mode and applied
    with its fixed sigma, so the same generator state always yields the same
    set.
    """
    n = dataset.num_train
    if partition.train_size != n:
        raise PartitionIndexError(f"Partition built for {partition.train_size} samples, "
                                  f"dataset has {n}")
    if partition.poison_indices and (min(partition.poison_indices) < 0
                                     or max(partition.poison_indices) >= n):
        raise PartitionIndexError("Poison index out of range",
                                  {'size': n, 'max': max(partition.poison_indices)})

    idx = torch.tensor(partition.poison_indices, dtype=torch.long)
    images = dataset.train_images.clone()
    if idx.numel():
        was_training = trigger.training
        trigger.eval()
        triggered = trigger.apply_batched(dataset.train_images[idx], batch_size)
        trigger.train(was_training)
        images[idx] = triggered.to(images.dtype)

    is_poisoned = torch.zeros(n, dtype=torch.bool)
    is_poisoned[idx] = True
    mixed = MixedDataset(images=images, labels=dataset.train_labels.clone(),
                         is_poisoned=is_poisoned, partition=partition,
                         trigger_id=trigger.snapshot_id())
    if not torch.equal(mixed.labels, dataset.train_labels):
        raise ContractError("Poisoning changed a label")
    log.debug(f"Built poisoned set: {mixed.num_poisoned} of {n} entries triggered "
              f"(trigger {mixed.trigger_id})")
    return mixed
