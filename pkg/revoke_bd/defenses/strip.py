"""
STRIP entropy analysis.

Each input is blended (pixelwise mean) with clean overlay images and the
Shannon entropy (natural log) of the softmax is averaged over the blends.
Backdoored inputs tend to keep predicting the target under blending and so
show low entropy; the report compares clean and triggered distributions.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ContractError
from ..models.training import forward


@torch.no_grad()
def strip_entropy(model: nn.Module, image: torch.Tensor, overlays: torch.Tensor,
                  n_overlays: Optional[int] = None) -> float:
    """Mean softmax entropy of (image + overlay) / 2 over the first n overlays."""
    n = overlays.shape[0] if n_overlays is None else n_overlays
    if n <= 0:
        raise ContractError("STRIP needs at least one overlay")
    if n > overlays.shape[0]:
        raise ContractError(f"asked for {n} overlays, pool has {overlays.shape[0]}")
    param = next(model.parameters())
    model.eval()
    image = image.to(device=param.device, dtype=param.dtype)
    blends = (image.unsqueeze(0) + overlays[:n].to(device=param.device, dtype=param.dtype)) / 2
    probs = F.softmax(forward(model, blends), dim=1)
    return float(torch.special.entr(probs).sum(dim=1).mean().item())


def overlap_coefficient(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of bin-wise minima of two normalized histograms (1 = identical)."""
    return float(np.minimum(a, b).sum())


@dataclass
class StripReport:
    """Entropy samples and normalized histograms for clean vs triggered inputs."""
    n_overlays: int
    clean: List[float] = field(default_factory=list)
    triggered: List[float] = field(default_factory=list)
    bin_edges: List[float] = field(default_factory=list)
    clean_hist: List[float] = field(default_factory=list)
    triggered_hist: List[float] = field(default_factory=list)

    @property
    def clean_mean(self) -> float:
        return float(np.mean(self.clean))

    @property
    def triggered_mean(self) -> float:
        return float(np.mean(self.triggered))

    @property
    def overlap(self) -> float:
        return overlap_coefficient(np.asarray(self.clean_hist), np.asarray(self.triggered_hist))

    def summary(self) -> dict:
        return {'n_overlays': self.n_overlays, 'clean_mean': self.clean_mean,
                'triggered_mean': self.triggered_mean, 'overlap': self.overlap,
                'samples': len(self.clean)}


def _histogram(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(values, bins=edges)
    return counts / max(counts.sum(), 1)


def strip_report(model: nn.Module, trigger, images: torch.Tensor, overlay_pool: torch.Tensor,
                 n_overlays: int = 100, bins: int = 30, seed: int = 0) -> StripReport:
    """
    Entropies of `images` and of G(images), each blended with n overlays drawn
    (without replacement, seeded per input) from overlay_pool.
    """
    if n_overlays <= 0:
        raise ContractError("STRIP needs at least one overlay")
    if images.shape[0] == 0:
        raise ContractError("STRIP needs at least one input")
    if n_overlays > overlay_pool.shape[0]:
        raise ContractError(f"overlay pool has {overlay_pool.shape[0]} images, need {n_overlays}")
    trigger.eval()
    triggered = trigger.apply_batched(images)
    rng = np.random.default_rng(seed)
    report = StripReport(n_overlays=n_overlays)
    for clean_x, trig_x in zip(images, triggered):
        pick = torch.from_numpy(rng.choice(overlay_pool.shape[0], size=n_overlays, replace=False))
        overlays = overlay_pool[pick]
        report.clean.append(strip_entropy(model, clean_x, overlays))
        report.triggered.append(strip_entropy(model, trig_x, overlays))

    both = np.concatenate([report.clean, report.triggered])
    lo, hi = float(both.min()), float(both.max())
    edges = np.linspace(lo, hi if hi > lo else lo + 1e-6, bins + 1)
    report.bin_edges = edges.tolist()
    report.clean_hist = _histogram(np.asarray(report.clean), edges).tolist()
    report.triggered_hist = _histogram(np.asarray(report.triggered), edges).tolist()
    return report
