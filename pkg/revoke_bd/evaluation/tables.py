"""
Plain-text and CSV renderings of protocol results.

    method_grid_table  simulation x revocation method grid
    sweep_table        one column per swept value (poisoning rate or eta)
    ablation_table     one row per ablation variant
"""

import csv
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

from .metrics import MetricsReport
from .protocol import SweepTable

METHOD_LABELS = {'first_order': 'First-Order', 'unroll_sgd': 'UnrollSGD'}


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.2f}"


def asr_u_cell(report: MetricsReport) -> str:
    """ASR-U with the signed change in parentheses, e.g. 25.12(-73.24)."""
    return f"{report.asr_u:.2f}({report.delta:+.2f})"


def _render(header: Sequence[str], rows: List[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = "+".join("-" * (w + 2) for w in widths)
    out = [" | ".join(str(h).ljust(w) for h, w in zip(header, widths)), line]
    out.extend(" | ".join(str(c).ljust(w) for c, w in zip(row, widths)) for row in rows)
    return "\n".join(out)


def method_grid_table(grid: Dict[Tuple[str, str], MetricsReport]) -> str:
    header = ["Simulation", "Revocation", "ASR", "ASR-U(Δ)", "BA", "BA-U"]
    rows = [[METHOD_LABELS.get(sim, sim), METHOD_LABELS.get(rev, rev), _fmt(r.asr), asr_u_cell(r),
             _fmt(r.ba), _fmt(r.ba_u)]
            for (sim, rev), r in sorted(grid.items())]
    return _render(header, rows)


def sweep_table(table: SweepTable) -> str:
    label = {'rho_p': 'Poisoning rate', 'eta': 'eta'}.get(table.parameter, table.parameter)
    header = [label] + [f"{c.value:g}" for c in table.cells]
    rows = []
    for name, getter in (("ASR", lambda r: _fmt(r.asr)), ("ASR-U(Δ)", asr_u_cell),
                         ("BA", lambda r: _fmt(r.ba)), ("BA-U", lambda r: _fmt(r.ba_u))):
        rows.append([name] + [getter(c.report) if c.report else "gap" for c in table.cells])
    return _render(header, rows)


def ablation_table(results: Dict[str, MetricsReport]) -> str:
    header = ["Variant", "ASR", "ASR-U(Δ)", "BA", "BA-U"]
    rows = [[name, _fmt(r.asr), asr_u_cell(r), _fmt(r.ba), _fmt(r.ba_u)]
            for name, r in results.items()]
    return _render(header, rows)


REPORT_FIELDS = ['label', 'asr', 'asr_u', 'delta', 'ba', 'ba_u', 'clean_accuracy', 'dataset',
                 'simulation_method', 'revocation_method', 'seed', 'config_hash',
                 'asr_excludes_target']


def write_reports_csv(path: Union[str, Path], labelled: Dict[str, MetricsReport],
                      gaps: Sequence[str] = ()):
    """One row per report; labels listed in `gaps` get an empty row marked as a gap."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_FIELDS + ['gap'])
        writer.writeheader()
        for label, report in labelled.items():
            row = {k: v for k, v in report.to_dict().items() if k in REPORT_FIELDS}
            writer.writerow({**row, 'label': label, 'gap': False})
        for label in gaps:
            writer.writerow({'label': label, 'gap': True})


def sweep_reports(table: SweepTable) -> Tuple[Dict[str, MetricsReport], List[str]]:
    labelled = {f"{table.parameter}={c.value:g}": c.report for c in table.cells if c.report}
    gaps = [f"{table.parameter}={c.value:g}" for c in table.cells if c.report is None]
    return labelled, gaps


def grid_reports(grid: Dict[Tuple[str, str], MetricsReport]) -> Dict[str, MetricsReport]:
    return {f"{sim}/{rev}": r for (sim, rev), r in sorted(grid.items())}
