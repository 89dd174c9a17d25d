"""
Static plots, regenerable from the run's CSV logs alone.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from torchvision.utils import save_image  # noqa: E402

from ..logger import get_logger  # noqa: E402

log = get_logger('plots')

Rows = Sequence[Dict[str, str]]


def _column(rows: Rows, key: str) -> np.ndarray:
    """Float column from CSV rows; blanks become NaN."""
    values = []
    for row in rows:
        raw = row.get(key, "")
        try:
            values.append(float(raw) if raw not in ("", None) else np.nan)
        except ValueError:
            values.append(np.nan)
    return np.asarray(values, dtype=float)


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_conflict_trace(rows: Rows, path: Union[str, Path], label: str = "") -> Path:
    """Per-round cosine between the attack and unlearning gradients."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    rounds = _column(rows, 'round') + 1
    ax.plot(rounds, _column(rows, 'cosine_probe'), marker='o', label=f"probe {label}".strip())
    ax.plot(rounds, _column(rows, 'cosine_step_mean'), linestyle='--',
            label=f"step mean {label}".strip())
    ax.axhline(0.0, color='grey', linewidth=0.8)
    ax.set_xlabel("outer round")
    ax.set_ylabel("cos(g_b, g_u)")
    ax.set_ylim(-1.05, 1.05)
    ax.legend()
    return _save(fig, path)


def plot_conflict_comparison(series: Dict[str, Rows], path: Union[str, Path]) -> Path:
    """Probe cosine of several runs on one chart (e.g. with and without mitigation)."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, rows in series.items():
        ax.plot(_column(rows, 'round') + 1, _column(rows, 'cosine_probe'), marker='o', label=name)
    ax.axhline(0.0, color='grey', linewidth=0.8)
    ax.set_xlabel("outer round")
    ax.set_ylabel("cos(g_b, g_u)")
    ax.legend()
    return _save(fig, path)


def plot_losses(rows: Rows, path: Union[str, Path]) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    rounds = _column(rows, 'round') + 1
    for key in ('loss_attack', 'loss_unlearn', 'loss_visibility', 'loss_non_adv', 'loss_total'):
        ax.plot(rounds, _column(rows, key), label=key.replace('loss_', ''))
    ax.set_xlabel("outer round")
    ax.set_ylabel("mean loss")
    ax.legend()
    return _save(fig, path)


def plot_surrogate_asr(rows: Rows, path: Union[str, Path]) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    rounds = _column(rows, 'round') + 1
    ax.plot(rounds, _column(rows, 'surrogate_asr'), marker='o', label="ASR")
    ax.plot(rounds, _column(rows, 'surrogate_asr_u'), marker='s', label="ASR-U")
    ax.plot(rounds, _column(rows, 'surrogate_ba'), linestyle='--', label="BA")
    ax.set_xlabel("outer round")
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend()
    return _save(fig, path)


def plot_prune_curve(rows: Rows, path: Union[str, Path]) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    fraction = _column(rows, 'fraction_pruned')
    ax.plot(fraction, _column(rows, 'ba'), marker='o', label="BA")
    ax.plot(fraction, _column(rows, 'asr'), marker='s', label="ASR")
    ax.set_xlabel("fraction of channels pruned")
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend()
    return _save(fig, path)


def plot_strip_histogram(rows: Rows, path: Union[str, Path], bins: int = 30) -> Path:
    clean = _column(rows, 'clean_entropy')
    triggered = _column(rows, 'triggered_entropy')
    fig, ax = plt.subplots(figsize=(6, 3.5))
    edges = np.histogram_bin_edges(np.concatenate([clean, triggered]), bins=bins)
    ax.hist(clean, bins=edges, alpha=0.6, density=True, label="clean")
    ax.hist(triggered, bins=edges, alpha=0.6, density=True, label="triggered")
    ax.set_xlabel("STRIP entropy")
    ax.set_ylabel("density")
    ax.legend()
    return _save(fig, path)


def save_poison_grid(clean: torch.Tensor, triggered: torch.Tensor, mean: Sequence[float],
                     std: Sequence[float], path: Union[str, Path], amplify: float = 10.0) -> Path:
    """PNG with a clean row, a triggered row and an amplified-difference row."""
    mean_t = torch.tensor(mean, dtype=clean.dtype).view(1, -1, 1, 1)
    std_t = torch.tensor(std, dtype=clean.dtype).view(1, -1, 1, 1)
    clean_px = (clean.cpu() * std_t + mean_t).clamp(0, 1)
    trig_px = (triggered.cpu().to(clean.dtype) * std_t + mean_t).clamp(0, 1)
    diff = (0.5 + amplify * (trig_px - clean_px)).clamp(0, 1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_image(torch.cat([clean_px, trig_px, diff]), str(path), nrow=clean.shape[0], padding=1)
    return path


def regenerate_plots(csv_rows: Dict[str, List[Dict[str, str]]], plots_dir: Union[str, Path],
                     bins: int = 30) -> List[Path]:
    """Rebuild every plot whose CSV exists; returns the written paths."""
    plots_dir = Path(plots_dir)
    written: List[Path] = []
    rounds = csv_rows.get('bilevel_rounds')
    if rounds:
        written.append(plot_conflict_trace(rounds, plots_dir / 'conflict_trace.png'))
        written.append(plot_losses(rounds, plots_dir / 'losses.png'))
        written.append(plot_surrogate_asr(rounds, plots_dir / 'surrogate_asr.png'))
    if csv_rows.get('prune_curve'):
        written.append(plot_prune_curve(csv_rows['prune_curve'], plots_dir / 'prune_curve.png'))
    if csv_rows.get('strip_entropy'):
        written.append(plot_strip_histogram(csv_rows['strip_entropy'], plots_dir / 'strip_entropy.png',
                                            bins))
    ablation = {name.split('__', 1)[1]: rows for name, rows in csv_rows.items()
                if name.startswith('ablation_rounds__') and rows}
    if ablation:
        written.append(plot_conflict_comparison(ablation, plots_dir / 'conflict_ablation.png'))
    for path in written:
        log.debug(f"Wrote {path}")
    return written
