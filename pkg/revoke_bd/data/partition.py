"""
Deterministic poison/forget partition.

The poison set is drawn once from the target class (clean-label: the samples
keep their true labels) and the forget set is a prefix of that draw, so a
larger forget count always contains a smaller one.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import torch

from ..errors import CapacityError, ContractError, NestingError, PartitionIndexError
from .datasets import LabeledDataset


@dataclass(frozen=True)
class DataPartition:
    """Poison set P and forget set U (U is a prefix of P in draw order)."""
    target_label: int
    poison_indices: Tuple[int, ...]
    forget_indices: Tuple[int, ...]
    rho_p: float
    rho_f_count: int
    seed: int
    train_size: int
    round_index: int = field(default=-1)  # >= 0 only for per-round re-drawn forget sets

    @property
    def num_poison(self) -> int:
        return len(self.poison_indices)

    @property
    def num_forget(self) -> int:
        return len(self.forget_indices)

    def check(self, labels: torch.Tensor):
        """Verify range, nesting and the clean-label constraint against labels."""
        n = int(labels.shape[0])
        if n != self.train_size:
            raise PartitionIndexError(f"Partition built for {self.train_size} samples, "
                                      f"dataset has {n}")
        if self.poison_indices and (min(self.poison_indices) < 0 or max(self.poison_indices) >= n):
            raise PartitionIndexError("Poison index out of range",
                                      {'min': min(self.poison_indices),
                                       'max': max(self.poison_indices), 'size': n})
        if not set(self.forget_indices) <= set(self.poison_indices):
            raise NestingError("Forget set is not contained in the poison set")
        idx = torch.tensor(self.poison_indices, dtype=torch.long)
        if idx.numel() and not bool((labels[idx] == self.target_label).all()):
            raise ContractError("Poison set contains non-target samples (clean-label violated)")

    def to_manifest(self) -> Dict[str, Any]:
        return {
            'target_label': self.target_label,
            'rho_p': self.rho_p,
            'rho_f_count': self.rho_f_count,
            'seed': self.seed,
            'train_size': self.train_size,
            'round_index': self.round_index,
            'poison_indices': sorted(self.poison_indices),
            'forget_indices': sorted(self.forget_indices),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_manifest(), sort_keys=True, separators=(',', ':'))

    @classmethod
    def from_manifest(cls, data: Dict[str, Any]) -> 'DataPartition':
        return cls(
            target_label=int(data['target_label']),
            poison_indices=tuple(int(i) for i in data['poison_indices']),
            forget_indices=tuple(int(i) for i in data['forget_indices']),
            rho_p=float(data['rho_p']),
            rho_f_count=int(data['rho_f_count']),
            seed=int(data['seed']),
            train_size=int(data['train_size']),
            round_index=int(data.get('round_index', -1)),
        )

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'DataPartition':
        return cls.from_manifest(json.loads(Path(path).read_text()))


def poison_count(rho_p: float, train_size: int) -> int:
    """round(rho_p * N), half away from zero."""
    return int(math.floor(rho_p * train_size + 0.5))


def make_partition(dataset: Union[LabeledDataset, torch.Tensor], target_label: int,
                   rho_p: float, rho_f_count: int, seed: int) -> DataPartition:
    """
    Seeded shuffle of the target-class indices, then prefix-taking.

    Raises CapacityError when the target class is too small for
    round(rho_p * N) poisons and NestingError when rho_f_count exceeds that.
    """
    labels = dataset.train_labels if isinstance(dataset, LabeledDataset) else torch.as_tensor(dataset)
    n = int(labels.shape[0])
    if not 0 < rho_p <= 1:
        raise ContractError(f"rho_p must be in (0, 1], got {rho_p}")
    if rho_f_count < 0:
        raise ContractError(f"rho_f_count must be >= 0, got {rho_f_count}")

    n_poison = poison_count(rho_p, n)
    candidates = torch.nonzero(labels == target_label, as_tuple=False).flatten().numpy()
    if n_poison > candidates.size:
        raise CapacityError(f"Need {n_poison} samples of class {target_label}, "
                            f"only {candidates.size} available",
                            {'required': n_poison, 'available': int(candidates.size)})
    if rho_f_count > n_poison:
        raise NestingError(f"Forget count {rho_f_count} exceeds poison count {n_poison}",
                           {'rho_f_count': rho_f_count, 'num_poison': n_poison})

    rng = np.random.default_rng(seed)
    order = candidates[rng.permutation(candidates.size)]
    poison = tuple(int(i) for i in order[:n_poison])
    return DataPartition(
        target_label=target_label,
        poison_indices=poison,
        forget_indices=poison[:rho_f_count],
        rho_p=rho_p,
        rho_f_count=rho_f_count,
        seed=seed,
        train_size=n,
    )


def redraw_forget_set(partition: DataPartition, round_index: int) -> DataPartition:
    """
    Fresh forget subset of the (unchanged) poison set for one round.

    Used only when the fixed-partition mitigation is switched off.
    """
    rng = np.random.default_rng([partition.seed, round_index])
    picks = rng.choice(partition.num_poison, size=partition.rho_f_count, replace=False)
    forget = tuple(partition.poison_indices[i] for i in picks)
    return DataPartition(
        target_label=partition.target_label,
        poison_indices=partition.poison_indices,
        forget_indices=forget,
        rho_p=partition.rho_p,
        rho_f_count=partition.rho_f_count,
        seed=partition.seed,
        train_size=partition.train_size,
        round_index=round_index,
    )
