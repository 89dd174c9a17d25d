"""
Dataset loading for revoke-bd.

Splits are held in memory as normalized float tensors. Train-time
augmentation is applied per sample by AugmentedTensorDataset, never to the
stored tensors, so triggers always see the un-augmented normalized image.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
from urllib.error import URLError

import torch
from torch.utils.data import DataLoader, Dataset
from torchvision import datasets as tv_datasets
from torchvision import transforms

from ..config import DatasetConfig
from ..errors import ContractError, CorruptDataError, DatasetLoadError, EmptySplitError
from ..logger import get_logger

log = get_logger('data')


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Normalized train/test splits plus the spec they were built from."""
    spec: DatasetConfig
    train_images: torch.Tensor
    train_labels: torch.Tensor
    test_images: torch.Tensor
    test_labels: torch.Tensor

    @property
    def num_train(self) -> int:
        return int(self.train_labels.shape[0])

    @property
    def num_test(self) -> int:
        return int(self.test_labels.shape[0])

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.spec.image_shape)

    @property
    def clamp_range(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Per-channel bounds of the normalized pixel range, shaped (1, C, 1, 1)."""
        return normalized_bounds(self.spec)

    def class_counts(self) -> torch.Tensor:
        return torch.bincount(self.train_labels, minlength=self.num_classes)


def normalized_bounds(spec: DatasetConfig) -> Tuple[torch.Tensor, torch.Tensor]:
    mean = torch.tensor(spec.mean).view(1, -1, 1, 1)
    std = torch.tensor(spec.std).view(1, -1, 1, 1)
    return (0.0 - mean) / std, (1.0 - mean) / std


def normalize(images: torch.Tensor, spec: DatasetConfig) -> torch.Tensor:
    """Map [0, 1] pixels to the normalized space of the spec."""
    mean = torch.tensor(spec.mean, dtype=images.dtype).view(1, -1, 1, 1)
    std = torch.tensor(spec.std, dtype=images.dtype).view(1, -1, 1, 1)
    return (images - mean) / std


def denormalize(images: torch.Tensor, spec: DatasetConfig) -> torch.Tensor:
    mean = torch.tensor(spec.mean, dtype=images.dtype, device=images.device).view(1, -1, 1, 1)
    std = torch.tensor(spec.std, dtype=images.dtype, device=images.device).view(1, -1, 1, 1)
    return images * std + mean


def stratified_indices(labels: torch.Tensor, limit: int, num_classes: int) -> torch.Tensor:
    """
    Pick `limit` indices with (near) equal counts per class.

    Classes get limit // C samples each; the first limit % C classes get one
    extra. Within a class the earliest indices win, and the result is sorted so
    the original order is kept.
    """
    quota, extra = divmod(limit, num_classes)
    chosen = []
    for cls in range(num_classes):
        want = quota + (1 if cls < extra else 0)
        cls_idx = torch.nonzero(labels == cls, as_tuple=False).flatten()
        if cls_idx.numel() < want:
            raise ContractError(f"Class {cls} has {cls_idx.numel()} samples, stratified "
                                f"subset needs {want}",
                                {'class': cls, 'available': int(cls_idx.numel()), 'required': want})
        chosen.append(cls_idx[:want])
    return torch.sort(torch.cat(chosen)).values


def _apply_limit(images: torch.Tensor, labels: torch.Tensor, limit: Optional[int],
                 num_classes: int, split: str) -> Tuple[torch.Tensor, torch.Tensor]:
    if limit is None:
        return images, labels
    if limit == 0:
        raise EmptySplitError(f"{split} limit of 0 leaves an empty split")
    if limit > labels.shape[0]:
        raise ContractError(f"{split} limit {limit} exceeds split size {labels.shape[0]}",
                            {'limit': limit, 'size': int(labels.shape[0])})
    idx = stratified_indices(labels, limit, num_classes)
    return images[idx], labels[idx]


def _check_labels(labels: torch.Tensor, num_classes: int, split: str):
    if labels.numel() == 0:
        raise EmptySplitError(f"{split} split is empty")
    lo, hi = int(labels.min()), int(labels.max())
    if lo < 0 or hi >= num_classes:
        raise CorruptDataError(f"{split} labels span [{lo}, {hi}], expected [0, {num_classes})",
                               {'min': lo, 'max': hi, 'num_classes': num_classes})


def _load_cifar10(spec: DatasetConfig) -> Tuple[torch.Tensor, ...]:
    splits = []
    for train in (True, False):
        try:
            ds = tv_datasets.CIFAR10(root=spec.root, train=train, download=spec.download)
        except (RuntimeError, URLError, OSError) as e:
            raise DatasetLoadError(f"Could not load CIFAR-10 from {spec.root}: {e}",
                                   {'root': spec.root, 'download': spec.download})
        images = torch.from_numpy(ds.data).permute(0, 3, 1, 2).float().div_(255.0)
        labels = torch.tensor(ds.targets, dtype=torch.long)
        splits.extend([images, labels])
    return tuple(splits)


def _synthetic_split(n: int, spec: DatasetConfig, templates: torch.Tensor,
                     generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    labels = torch.arange(n) % spec.num_classes
    noise = torch.randn((n, *spec.image_shape), generator=generator)
    images = (0.5 + 0.35 * templates[labels] + 0.1 * noise).clamp_(0.0, 1.0)
    return images, labels


def _load_synthetic(spec: DatasetConfig, seed: int) -> Tuple[torch.Tensor, ...]:
    """Class-conditional smooth patterns plus noise; deterministic in the seed."""
    generator = torch.Generator().manual_seed(seed)
    c, h, w = spec.image_shape
    coarse = torch.randn((spec.num_classes, c, 4, 4), generator=generator)
    templates = torch.nn.functional.interpolate(coarse, size=(h, w), mode='bilinear',
                                                align_corners=False).tanh()
    train = _synthetic_split(spec.synthetic_train_size, spec, templates, generator)
    test = _synthetic_split(spec.synthetic_test_size, spec, templates, generator)
    return (*train, *test)


def load_dataset(spec: DatasetConfig, seed: int = 0) -> LabeledDataset:
    """
    Load train and test splits, apply the stratified limits and normalize.

    Raises DatasetLoadError when files are missing, CorruptDataError when labels
    fall outside [0, num_classes) or shapes disagree with the spec, and
    EmptySplitError for a zero train_limit.
    """
    spec.validate()
    if spec.name == 'cifar10':
        train_x, train_y, test_x, test_y = _load_cifar10(spec)
    else:
        train_x, train_y, test_x, test_y = _load_synthetic(spec, seed)

    for split, images, labels in (('train', train_x, train_y), ('test', test_x, test_y)):
        _check_labels(labels, spec.num_classes, split)
        if tuple(images.shape[1:]) != tuple(spec.image_shape):
            raise CorruptDataError(f"{split} images have shape {tuple(images.shape[1:])}, "
                                   f"spec says {tuple(spec.image_shape)}")

    train_x, train_y = _apply_limit(train_x, train_y, spec.train_limit, spec.num_classes, 'train')
    test_x, test_y = _apply_limit(test_x, test_y, spec.test_limit, spec.num_classes, 'test')

    dataset = LabeledDataset(
        spec=spec,
        train_images=normalize(train_x, spec).contiguous(),
        train_labels=train_y.contiguous(),
        test_images=normalize(test_x, spec).contiguous(),
        test_labels=test_y.contiguous(),
    )
    log.info(f"📦 Loaded {spec.name}: {dataset.num_train} train / {dataset.num_test} test, "
             f"shape {dataset.image_shape}")
    return dataset


def build_augmentation(spec: DatasetConfig) -> Optional[transforms.Compose]:
    """Train-batch augmentation (crop, flip, rotation) on normalized tensors."""
    steps = []
    _, h, w = spec.image_shape
    if spec.augment_crop_padding > 0:
        steps.append(transforms.RandomCrop((h, w), padding=spec.augment_crop_padding))
    if spec.augment_flip:
        steps.append(transforms.RandomHorizontalFlip())
    if spec.augment_rotation > 0:
        steps.append(transforms.RandomRotation(spec.augment_rotation))
    return transforms.Compose(steps) if steps else None


class AugmentedTensorDataset(Dataset):
    """In-memory (image, label) pairs with an optional per-sample transform."""

    def __init__(self, images: torch.Tensor, labels: torch.Tensor, transform=None):
        if images.shape[0] != labels.shape[0]:
            raise ContractError("images and labels differ in length")
        self.images = images
        self.labels = labels
        self.transform = transform

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, index: int):
        image = self.images[index]
        if self.transform is not None:
            image = self.transform(image)
        return image, self.labels[index]


def make_loader(images: torch.Tensor, labels: torch.Tensor, batch_size: int,
                shuffle: bool, seed: int, transform=None) -> DataLoader:
    """Single-process loader; shuffling order is fixed by the seed."""
    generator = torch.Generator().manual_seed(seed)
    return DataLoader(AugmentedTensorDataset(images, labels, transform),
                      batch_size=batch_size, shuffle=shuffle, generator=generator,
                      num_workers=0, drop_last=False)
