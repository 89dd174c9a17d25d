"""
Configuration management for revoke-bd.
Supports a nested JSON file plus environment variable overrides.
"""

import copy
import hashlib
import json
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import ConfigError


UNLEARN_METHODS = ('first_order', 'unroll_sgd')
SIGMA_MODES = ('sampled', 'fixed')
DATASETS = ('cifar10', 'synthetic')


@dataclass
class DatasetConfig:
    """Which dataset to load and how to normalize/augment it."""
    name: str = "cifar10"
    root: str = "./data"
    image_shape: List[int] = field(default_factory=lambda: [3, 32, 32])
    num_classes: int = 10
    train_limit: Optional[int] = 10000  # class-stratified desk-scale subset
    test_limit: Optional[int] = None
    mean: List[float] = field(default_factory=lambda: [0.4914, 0.4822, 0.4465])
    std: List[float] = field(default_factory=lambda: [0.2470, 0.2435, 0.2616])
    augment_flip: bool = True
    augment_rotation: float = 15.0   # degrees, 0 disables
    augment_crop_padding: int = 4    # pixels, 0 disables
    download: bool = True
    # Only used by the synthetic dataset
    synthetic_train_size: int = 2000
    synthetic_test_size: int = 500

    def validate(self):
        if self.name not in DATASETS:
            raise ConfigError(f"Unknown dataset '{self.name}'", {'allowed': DATASETS})
        if len(self.image_shape) != 3 or any(d <= 0 for d in self.image_shape):
            raise ConfigError(f"image_shape must be 3 positive ints, got {self.image_shape}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        channels = self.image_shape[0]
        if len(self.mean) != channels or len(self.std) != channels:
            raise ConfigError("mean/std must have one entry per channel")
        if any(s <= 0 for s in self.std):
            raise ConfigError("std entries must be positive")
        if self.train_limit is not None and self.train_limit < 0:
            raise ConfigError(f"train_limit must be >= 0, got {self.train_limit}")


@dataclass
class ClassifierConfig:
    """Small pre-activation residual classifier."""
    widths: List[int] = field(default_factory=lambda: [32, 64, 128])
    blocks_per_stage: int = 1

    def validate(self):
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ConfigError(f"widths must be positive, got {self.widths}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")


@dataclass
class GeneratorConfig:
    """Two-level encoder-decoder trigger network."""
    base_channels: int = 16

    def validate(self):
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")


@dataclass
class TriggerConfig:
    """
    Trigger function settings.

    eta scales the filtered generator noise, mask_ratio picks the retained
    low-frequency block, and the Gaussian blur sigma is sampled per batch while
    training the generator and fixed at the interval midpoint otherwise.
    """
    eta: float = 0.08
    mask_ratio: float = 0.65
    blur_kernel_size: int = 3
    sigma_range: List[float] = field(default_factory=lambda: [0.1, 1.0])
    sigma_mode: str = "sampled"
    blur_enabled: bool = True

    @property
    def fixed_sigma(self) -> float:
        return 0.5 * (self.sigma_range[0] + self.sigma_range[1])

    def validate(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if not 0 < self.mask_ratio <= 1:
            raise ConfigError(f"mask_ratio must be in (0, 1], got {self.mask_ratio}")
        if self.blur_kernel_size < 1 or self.blur_kernel_size % 2 == 0:
            raise ConfigError(f"blur_kernel_size must be odd, got {self.blur_kernel_size}")
        lo, hi = self.sigma_range
        if not 0 < lo <= hi:
            raise ConfigError(f"sigma_range must satisfy 0 < lo <= hi, got {self.sigma_range}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"sigma_mode must be one of {SIGMA_MODES}")


@dataclass
class LossWeights:
    """Weights of the unlearning, visibility and non-adversarial losses."""
    lambda_unlearn: float = 1.0
    lambda_vis: float = 0.02
    lambda_non_adv: float = 0.8

    def validate(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")


@dataclass
class UnlearnConfig:
    """Approximate unlearning settings (first-order step or multi-epoch ascent)."""
    method: str = "first_order"
    step_size: float = 0.01
    epochs: int = 3                 # unroll_sgd only
    layer_suffix_count: int = 15    # trailing parameter tensors that may change
    batch_size: int = 128
    divergence_factor: float = 10.0  # stop when forget loss > factor * ln(C)

    def validate(self):
        if self.method not in UNLEARN_METHODS:
            raise ConfigError(f"Unknown unlearning method '{self.method}'",
                              {'allowed': UNLEARN_METHODS})
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.layer_suffix_count < 1:
            raise ConfigError("layer_suffix_count must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class PartitionConfig:
    """Deterministic poison/forget partition."""
    target_label: int = 0
    rho_p: float = 0.05       # fraction of the full training set
    rho_f_count: int = 50     # forget-set size

    def validate(self):
        if not 0 < self.rho_p <= 1:
            raise ConfigError(f"rho_p must be in (0, 1], got {self.rho_p}")
        if self.rho_f_count < 1:
            raise ConfigError(f"rho_f_count must be >= 1, got {self.rho_f_count}")


@dataclass
class TrainingConfig:
    """Classifier training (clean pretraining and victim training)."""
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    accuracy_floor: float = 50.0

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")


@dataclass
class BilevelConfig:
    """Alternating bilevel optimization of the trigger generator."""
    outer_rounds: int = 10
    inner_epochs_per_round: int = 2
    outer_steps_per_round: Optional[int] = None  # None = one pass over the training set
    generator_lr: float = 0.01
    generator_momentum: float = 0.9
    classifier_lr: float = 0.01
    warm_start: bool = True
    alpha: float = 0.6
    fixed_partition: bool = True
    use_pcgrad: bool = True
    probe_batch_size: int = 128
    eval_limit: int = 1000
    max_consecutive_failures: int = 3
    surrogate_widths: Optional[List[int]] = None  # None = same as victim

    def validate(self):
        if self.outer_rounds < 1 or self.inner_epochs_per_round < 1:
            raise ConfigError("outer_rounds and inner_epochs_per_round must be >= 1")
        if self.outer_steps_per_round is not None and self.outer_steps_per_round < 1:
            raise ConfigError("outer_steps_per_round must be >= 1")
        if self.generator_lr <= 0 or self.classifier_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.probe_batch_size < 1 or self.eval_limit < 1:
            raise ConfigError("probe_batch_size and eval_limit must be >= 1")

    @property
    def mitigation(self) -> bool:
        return self.fixed_partition and self.use_pcgrad


@dataclass
class EvaluationConfig:
    """Attack -> revoke protocol settings."""
    victim_seed_offset: int = 1000
    batch_size: int = 256
    cross_method_grid: bool = False
    exclude_target_from_asr: bool = True

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.exclude_target_from_asr:
            raise ConfigError("ASR is only defined over non-target samples")


@dataclass
class DefenseConfig:
    """Fine-pruning and STRIP harness settings."""
    prune_steps: Optional[List[int]] = None  # None = every prune_stride channels
    prune_stride: int = 8
    strip_overlays: int = 100
    strip_samples: int = 200
    histogram_bins: int = 30

    def validate(self):
        if self.prune_steps is not None:
            if any(b <= a for a, b in zip(self.prune_steps, self.prune_steps[1:])):
                raise ConfigError("prune_steps must be strictly increasing")
        if self.prune_stride < 1 or self.strip_overlays < 1 or self.strip_samples < 1:
            raise ConfigError("prune_stride, strip_overlays and strip_samples must be >= 1")


# Overrides applied on top of the dataclass defaults
PRESETS: Dict[str, Dict[str, Any]] = {
    'desk': {},
    'full': {
        'dataset': {'train_limit': None},
        'training': {'epochs': 200},
        'partition': {'rho_f_count': 250},
        'bilevel': {'inner_epochs_per_round': 5},
    },
    'smoke': {
        'dataset': {'name': 'synthetic', 'image_shape': [3, 16, 16], 'train_limit': None,
                    'mean': [0.5, 0.5, 0.5], 'std': [0.25, 0.25, 0.25],
                    'augment_rotation': 0.0, 'synthetic_train_size': 400,
                    'synthetic_test_size': 200},
        'classifier': {'widths': [8, 16, 16]},
        'generator': {'base_channels': 4},
        'training': {'epochs': 2, 'batch_size': 64},
        'partition': {'rho_p': 0.05, 'rho_f_count': 5},
        'bilevel': {'outer_rounds': 2, 'inner_epochs_per_round': 1,
                    'outer_steps_per_round': 3, 'probe_batch_size': 32, 'eval_limit': 200},
        'simulation_unlearn': {'batch_size': 16},
        'evaluation_unlearn': {'batch_size': 16},
        'defense': {'strip_overlays': 8, 'strip_samples': 16, 'prune_stride': 4},
    },
}


class ExperimentConfig:
    """Main configuration class."""

    SECTIONS = {
        'dataset': DatasetConfig,
        'classifier': ClassifierConfig,
        'generator': GeneratorConfig,
        'trigger': TriggerConfig,
        'loss_weights': LossWeights,
        'simulation_unlearn': UnlearnConfig,
        'evaluation_unlearn': UnlearnConfig,
        'partition': PartitionConfig,
        'training': TrainingConfig,
        'bilevel': BilevelConfig,
        'evaluation': EvaluationConfig,
        'defense': DefenseConfig,
    }

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = Path(config_path) if config_path else None
        self._lock = threading.RLock()

        # Feature configs
        self.dataset = DatasetConfig()
        self.classifier = ClassifierConfig()
        self.generator = GeneratorConfig()
        self.trigger = TriggerConfig()
        self.loss_weights = LossWeights()
        self.simulation_unlearn = UnlearnConfig()
        self.evaluation_unlearn = UnlearnConfig()
        self.partition = PartitionConfig()
        self.training = TrainingConfig()
        self.bilevel = BilevelConfig()
        self.evaluation = EvaluationConfig()
        self.defense = DefenseConfig()

        # Run settings
        self.seed = 0
        self.output_dir = "runs/desk"
        self.device = "auto"
        self.precision = "float32"

        self._load()
        self._apply_env_vars()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        config = cls(None)
        config._apply_dict(data)
        return config

    @classmethod
    def from_preset(cls, name: str) -> 'ExperimentConfig':
        if name not in PRESETS:
            raise ConfigError(f"Unknown preset '{name}'", {'allowed': sorted(PRESETS)})
        config = cls(None)
        config._apply_dict(copy.deepcopy(PRESETS[name]), merge=True)
        config.output_dir = f"runs/{name}"
        return config

    def _load(self):
        """Load configuration from file."""
        if self.config_path is None or not self.config_path.exists():
            return
        try:
            with open(self.config_path, 'r') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Could not load config {self.config_path}: {e}")
        self._apply_dict(data)

    def _apply_dict(self, data: Dict[str, Any], merge: bool = False):
        """Apply dictionary to configuration.

        With merge=True a section dict only overrides the keys it names;
        otherwise it replaces the section (missing keys fall back to defaults).
        """
        for key, section_cls in self.SECTIONS.items():
            if key not in data:
                continue
            values = data[key]
            if not isinstance(values, dict):
                raise ConfigError(f"Section '{key}' must be an object")
            if merge:
                values = {**asdict(getattr(self, key)), **values}
            try:
                setattr(self, key, section_cls(**values))
            except TypeError as e:
                raise ConfigError(f"Bad keys in section '{key}': {e}")

        self.seed = int(data.get('seed', self.seed))
        self.output_dir = data.get('output_dir', self.output_dir)
        self.device = data.get('device', self.device)
        self.precision = data.get('precision', self.precision)

    def _apply_env_vars(self):
        """Apply environment variable overrides."""
        data_root = os.environ.get('REVOKE_BD_DATA')
        if data_root:
            self.dataset.root = data_root

        device = os.environ.get('REVOKE_BD_DEVICE')
        if device:
            self.device = device

        output_dir = os.environ.get('REVOKE_BD_OUTPUT')
        if output_dir:
            self.output_dir = output_dir

    def validate(self):
        """Validate every sub-config; raises ConfigError."""
        for key in self.SECTIONS:
            getattr(self, key).validate()
        if not 0 <= self.partition.target_label < self.dataset.num_classes:
            raise ConfigError(f"target_label {self.partition.target_label} outside "
                              f"[0, {self.dataset.num_classes})")
        if self.precision not in ('float32', 'float64'):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision}")
        if self.device not in ('auto', 'cpu', 'cuda') and not self.device.startswith('cuda:'):
            raise ConfigError(f"Unknown device '{self.device}'")

    def save(self, path: Optional[str] = None):
        """Save configuration to file."""
        target = Path(path) if path else self.config_path
        if target is None:
            raise ConfigError("No config path to save to")
        with self._lock:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, 'w') as f:
                json.dump(self.to_dict(), f, indent=2)

    def update(self, data: Dict[str, Any]):
        """Merge a partial dictionary into the configuration."""
        with self._lock:
            self._apply_dict(data, merge=True)

    def copy(self) -> 'ExperimentConfig':
        clone = ExperimentConfig.from_dict(copy.deepcopy(self.to_dict()))
        clone.config_path = self.config_path
        return clone

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary."""
        data = {key: asdict(getattr(self, key)) for key in self.SECTIONS}
        data.update({
            'seed': self.seed,
            'output_dir': self.output_dir,
            'device': self.device,
            'precision': self.precision,
        })
        return data

    def config_hash(self) -> str:
        """Provenance hash of everything that affects results."""
        data = self.to_dict()
        data.pop('output_dir')
        canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]
