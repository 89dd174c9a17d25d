"""Plots rebuilt from CSV rows."""

import torch

from revoke_bd.evaluation.plots import regenerate_plots, save_poison_grid


def _round_rows(cosines):
    return [{'round': str(r), 'cosine_probe': c, 'cosine_step_mean': '-0.1', 'loss_attack': '1.0',
             'loss_unlearn': '2.0', 'loss_visibility': '0.1', 'loss_non_adv': '0.5',
             'loss_total': '3.0', 'surrogate_asr': '80', 'surrogate_asr_u': '30',
             'surrogate_ba': '70'} for r, c in enumerate(cosines)]


def test_regenerate_from_csv_rows(tmp_path):
    rows = {
        'bilevel_rounds': _round_rows(['-0.3', '', '0.1']),
        'prune_curve': [{'neurons_pruned': '0', 'fraction_pruned': '0', 'ba': '80', 'asr': '95'},
                        {'neurons_pruned': '8', 'fraction_pruned': '0.5', 'ba': '60', 'asr': '40'}],
        'strip_entropy': [{'sample': str(i), 'clean_entropy': str(1.0 + 0.1 * i),
                           'triggered_entropy': str(0.2 + 0.05 * i)} for i in range(6)],
        'ablation_rounds__ours': _round_rows(['0.2', '0.3']),
        'ablation_rounds__without_mitigation': _round_rows(['-0.4', '-0.5']),
    }
    written = regenerate_plots(rows, tmp_path / 'plots', bins=5)
    names = sorted(p.name for p in written)
    assert names == ['conflict_ablation.png', 'conflict_trace.png', 'losses.png', 'prune_curve.png',
                     'strip_entropy.png', 'surrogate_asr.png']
    assert all(p.stat().st_size > 0 for p in written)


def test_nothing_to_plot(tmp_path):
    assert regenerate_plots({'bilevel_rounds': []}, tmp_path) == []


def test_poison_grid(tmp_path):
    clean = torch.zeros(4, 3, 8, 8)
    triggered = clean + 0.01
    path = save_poison_grid(clean, triggered, [0.5] * 3, [0.25] * 3, tmp_path / 'grid.png')
    assert path.exists() and path.stat().st_size > 0
