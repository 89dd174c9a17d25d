"""
Core application for revoke-bd.
Coordinates the experiment stages behind the CLI commands.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .artifacts import ArtifactStore
from .attack.trigger import TriggerGenerator
from .config import ExperimentConfig
from .data.partition import DataPartition
from .errors import StaleArtifactError
from .defenses import fine_prune, strip_report
from .evaluation import plots
from .evaluation.protocol import (ABLATION_VARIANTS, ProtocolContext, ablation, build_trigger,
                                  cross_method_grid, inject_backdoor, make_report, prepare,
                                  revoke_victim, sweep, train_clean, train_trigger)
from .evaluation.tables import (ablation_table, grid_reports, method_grid_table, sweep_reports,
                                sweep_table, write_reports_csv)
from .logger import Logger
from .models.classifier import build_classifier
from .models.snapshot import ParameterSnapshot, load_checkpoint, restore, save_checkpoint, snapshot
from .unlearning import RevocationReport


class ExperimentCore:
    """
    Core experiment coordinator - one method per CLI command.

    RESPONSIBILITIES:
        - Owns the run directory through ArtifactStore
        - Runs each stage once per config hash (cached unless forced)
        - Restores upstream checkpoints for downstream stages
        - Writes CSV logs, JSON/text reports and plots

    ARCHITECTURE:
        ExperimentCore
        ├── config      - ExperimentConfig (its hash stamps every artifact)
        ├── store       - ArtifactStore for <output_dir>
        └── context     - ProtocolContext (dataset + partition), built lazily

    DATA FLOW:
        1. pretrain         -> checkpoints/clean, partition.json
        2. train-generator  -> checkpoints/generator, csv/bilevel_*.csv
        3. attack           -> checkpoints/victim, plots/poison_grid.png
        4. revoke           -> checkpoints/revoked, reports/revocation.json
        5. evaluate         -> reports/metrics.json|.txt (optionally the method grid)
        6. defend           -> csv/prune_curve.csv, csv/strip_entropy.csv
        sweep / ablate reuse the clean checkpoint and run their own protocols.
    """

    def __init__(self, config: ExperimentConfig, logger: Logger):
        self.config = config
        self.logger = logger
        self.log = logger.get_logger('core')

        from . import __version__

        config.validate()
        self.config_hash = config.config_hash()
        self.run_dir = Path(config.output_dir)
        self.store = ArtifactStore(self.run_dir, logger, self.config_hash, app_version=__version__)
        self.store.ensure_layout()
        logger.attach_run_dir(str(self.store.logs_dir))
        config.save(str(self.run_dir / 'config.json'))

        self._context: Optional[ProtocolContext] = None

    @property
    def context(self) -> ProtocolContext:
        if self._context is None:
            self._context = prepare(self.config)
        return self._context

    # =========================================================================
    # HELPERS
    # =========================================================================

    def _cached(self, stage: str, force: bool) -> Optional[Dict[str, Any]]:
        """Summary of a completed stage, or None when it must (re)run."""
        if force or not self.store.is_complete(stage):
            return None
        manifest = self.store.load_stage(stage)
        self.log.info(f"⏭️ Stage '{stage}' already complete for config {self.config_hash}, skipping")
        return {**manifest.summary, 'cached': True}

    def _finish(self, stage: str, outputs: Dict[str, str], summary: Dict[str, Any]) -> Dict[str, Any]:
        self.store.save_stage(stage, outputs=outputs, summary=summary)
        self.log.info(f"✅ Stage '{stage}' complete")
        return {**summary, 'cached': False}

    def _save(self, snap: ParameterSnapshot, name: str) -> str:
        path = save_checkpoint(snap, self.store.checkpoint_stem(name),
                               extra={'config_hash': self.config_hash})
        return str(path)

    def _restore(self, model: nn.Module, name: str) -> nn.Module:
        snap, _ = load_checkpoint(self.store.checkpoint_stem(name))
        restore(model, snap)
        return model.to(device=self.context.device, dtype=self.context.dtype)

    def _load_clean(self) -> Tuple[nn.Module, ParameterSnapshot]:
        self.store.require('pretrain')
        snap, _ = load_checkpoint(self.store.checkpoint_stem('clean'))
        model = build_classifier(self.config.classifier, self.config.dataset,
                                 widths=self.config.bilevel.surrogate_widths)
        restore(model, snap)
        model.to(device=self.context.device, dtype=self.context.dtype)
        model.eval()
        return model, snap

    def _load_trigger(self) -> TriggerGenerator:
        self.store.require('generator')
        ctx = self.context
        trigger = build_trigger(self.config, ctx.dataset, ctx.device, ctx.dtype)
        self._restore(trigger, 'generator')
        trigger.eval()
        return trigger

    def _load_victim(self) -> nn.Module:
        self.store.require('attack')
        victim = build_classifier(self.config.classifier, self.config.dataset)
        self._restore(victim, 'victim')
        victim.eval()
        return victim

    def _clean_pool(self, limit: int) -> torch.Tensor:
        """Clean training images outside the poison set (STRIP overlays, pruning probe)."""
        ctx = self.context
        poisoned = set(ctx.partition.poison_indices)
        keep = [i for i in range(ctx.dataset.num_train) if i not in poisoned][:limit]
        return ctx.dataset.train_images[torch.tensor(keep, dtype=torch.long)]

    # =========================================================================
    # COMMANDS
    # =========================================================================

    def cmd_pretrain(self, force: bool = False) -> Dict[str, Any]:
        """Train theta_clean and record the data partition."""
        cached = self._cached('pretrain', force)
        if cached:
            return cached
        self.log.info("🏋️ Pretraining the clean surrogate classifier")
        ctx = self.context
        _, snap = train_clean(ctx)
        partition_path = self.run_dir / 'partition.json'
        ctx.partition.save(partition_path)
        summary = {
            'clean_accuracy': snap.metadata.get('accuracy'),
            'num_poison': ctx.partition.num_poison,
            'num_forget': ctx.partition.num_forget,
            'target_label': ctx.partition.target_label,
        }
        return self._finish('pretrain', {'checkpoint': self._save(snap, 'clean'),
                                         'partition': str(partition_path)}, summary)

    def cmd_train_generator(self, force: bool = False) -> Dict[str, Any]:
        """Bilevel optimization of the trigger generator against the surrogate."""
        cached = self._cached('generator', force)
        if cached:
            return cached
        model_clean, theta_clean = self._load_clean()
        self.store.start_csv('bilevel_steps')
        self.store.start_csv('bilevel_rounds')
        self.log.info("🧠 Training the trigger generator")
        result = train_trigger(
            self.context, model_clean, theta_clean,
            on_step=lambda row: self.store.append_csv('bilevel_steps', row),
            on_round=lambda row, _trigger: self.store.append_csv('bilevel_rounds', row))

        trigger = result.trigger
        snap = snapshot(trigger, 'generator', step=len(result.rounds),
                        trigger_id=trigger.snapshot_id())
        trace = result.trace
        report = {
            'trigger_id': trigger.snapshot_id(),
            'rounds': len(result.rounds),
            'steps': len(result.steps),
            'failed_rounds': result.failed_rounds,
            'skipped_steps': result.skipped_steps,
            'mitigation': trace.mitigation,
            'cosine_probe': trace.round_probe,
            'cosine_step_mean': trace.round_step_mean,
            'cosine_missing': trace.missing,
            'final_round': result.final_round,
        }
        self.store.save_report('bilevel', report)
        summary = {k: report[k] for k in ('trigger_id', 'rounds', 'steps', 'failed_rounds',
                                         'skipped_steps')}
        return self._finish('generator', {'checkpoint': self._save(snap, 'generator'),
                                          'steps_csv': str(self.store.csv_path('bilevel_steps')),
                                          'rounds_csv': str(self.store.csv_path('bilevel_rounds'))},
                            summary)

    def cmd_attack(self, force: bool = False) -> Dict[str, Any]:
        """Train a fresh victim on the poisoned training set."""
        cached = self._cached('attack', force)
        if cached:
            return cached
        trigger = self._load_trigger()
        self._check_partition()
        ctx = self.context
        victim = inject_backdoor(ctx, trigger)
        snap = snapshot(victim.model, 'victim', asr=victim.asr, ba=victim.ba, seed=victim.seed,
                        trigger_id=trigger.snapshot_id())

        sample = ctx.dataset.test_images[:8]
        grid_path = plots.save_poison_grid(sample, trigger.apply_batched(sample),
                                           ctx.dataset.spec.mean, ctx.dataset.spec.std,
                                           self.store.plot_path('poison_grid'))
        summary = {'asr': victim.asr, 'ba': victim.ba, 'victim_seed': victim.seed,
                   'num_poisoned': victim.mixed.num_poisoned, 'trigger_id': trigger.snapshot_id()}
        self.store.save_report('attack', summary)
        return self._finish('attack', {'checkpoint': self._save(snap, 'victim'),
                                       'poison_grid': str(grid_path)}, summary)

    def cmd_revoke(self, force: bool = False) -> Dict[str, Any]:
        """Issue the unlearning request for U against the victim."""
        cached = self._cached('revoke', force)
        if cached:
            return cached
        victim = self._load_victim()
        trigger = self._load_trigger()
        self._check_partition()
        model_u, report = revoke_victim(self.context, victim, trigger)
        snap = snapshot(model_u, 'revoked', asr_u=report.asr_u, ba_u=report.ba_u)
        self.store.save_report('revocation', report.to_dict())
        if report.diverged:
            self.log.warning("⚠️ Revocation unlearning hit the divergence guard")
        return self._finish('revoke', {'checkpoint': self._save(snap, 'revoked')}, report.to_dict())

    def cmd_evaluate(self, grid: bool = False, force: bool = False) -> Dict[str, Any]:
        """MetricsReport for the main run, plus the cross-method grid on request."""
        grid = grid or self.config.evaluation.cross_method_grid
        cached = self._cached('evaluate', force)
        if cached and (cached.get('grid') or not grid):
            return cached
        self.store.require('revoke')
        pretrain = self.store.require('pretrain')
        data = dict(self.store.load_report('revocation'))
        data.pop('config_hash', None)
        data.pop('delta', None)
        revocation = RevocationReport(**data)
        metrics = make_report(self.context, revocation,
                              clean_accuracy=pretrain.summary.get('clean_accuracy'),
                              eta=self.config.trigger.eta, rho_p=self.config.partition.rho_p)
        self.store.save_report('metrics', metrics.to_dict())
        write_reports_csv(self.store.csv_path('metrics'), {'main': metrics})
        text = (f"ASR {metrics.asr:.2f} | ASR-U {metrics.asr_u:.2f} ({metrics.delta:+.2f}) | "
                f"BA {metrics.ba:.2f} | BA-U {metrics.ba_u:.2f}")
        self.store.save_text('metrics', text)
        self.log.info(f"📊 {text}")
        outputs = {'metrics': str(self.store.reports_dir / 'metrics.json')}

        if grid:
            self.log.info("🧪 Running the simulation x revocation method grid")
            results = cross_method_grid(self.config, self.context, clean=self._load_clean())
            table = method_grid_table(results)
            self.store.save_text('method_grid', table)
            self.store.save_report('method_grid', {k: r.to_dict()
                                                   for k, r in grid_reports(results).items()})
            write_reports_csv(self.store.csv_path('method_grid'), grid_reports(results))
            self.log.info("\n" + table)
            outputs['method_grid'] = str(self.store.reports_dir / 'method_grid.txt')

        summary = {**metrics.to_dict(), 'grid': grid}
        return self._finish('evaluate', outputs, summary)

    def cmd_defend(self, force: bool = False) -> Dict[str, Any]:
        """Fine-pruning curve and STRIP entropy report against the victim."""
        cached = self._cached('defend', force)
        if cached:
            return cached
        victim = self._load_victim()
        trigger = self._load_trigger()
        ctx = self.context
        cfg = self.config.defense
        test_x, test_y = ctx.dataset.test_images, ctx.dataset.test_labels
        bs = self.config.evaluation.batch_size

        self.log.info("✂️ Fine-pruning sweep")
        curve = fine_prune(victim, self._clean_pool(cfg.strip_samples), test_x, test_y, trigger,
                           ctx.partition.target_label, prune_steps=cfg.prune_steps,
                           stride=cfg.prune_stride, batch_size=bs)
        self.store.start_csv('prune_curve')
        for row in curve.rows():
            self.store.append_csv('prune_curve', row)

        self.log.info("🔍 STRIP entropy")
        n_samples = min(cfg.strip_samples, ctx.dataset.num_test)
        pool = self._clean_pool(max(cfg.strip_overlays * 4, cfg.strip_overlays))
        strip = strip_report(victim, trigger, test_x[:n_samples], pool,
                             n_overlays=cfg.strip_overlays, bins=cfg.histogram_bins,
                             seed=self.config.seed)
        self.store.start_csv('strip_entropy')
        for i, (clean, triggered) in enumerate(zip(strip.clean, strip.triggered)):
            self.store.append_csv('strip_entropy', {'sample': i, 'clean_entropy': clean,
                                                    'triggered_entropy': triggered})

        prune_plot = plots.plot_prune_curve(self.store.read_csv('prune_curve'),
                                            self.store.plot_path('prune_curve'))
        strip_plot = plots.plot_strip_histogram(self.store.read_csv('strip_entropy'),
                                                self.store.plot_path('strip_entropy'),
                                                cfg.histogram_bins)
        report = {'prune_curve': curve.rows(), 'total_channels': curve.total_channels,
                  'strip': strip.summary(), 'strip_bin_edges': strip.bin_edges,
                  'strip_clean_hist': strip.clean_hist,
                  'strip_triggered_hist': strip.triggered_hist}
        self.store.save_report('defense', report)
        last = curve.points[-1]
        summary = {'total_channels': curve.total_channels, 'final_pruned': last.neurons_pruned,
                   'final_ba': last.ba, 'final_asr': last.asr, **strip.summary()}
        self.log.info(f"🛡️ Pruned {last.neurons_pruned}/{curve.total_channels}: BA {last.ba:.2f}, "
                      f"ASR {last.asr:.2f}; STRIP overlap {strip.overlap:.3f}")
        return self._finish('defend', {'prune_plot': str(prune_plot), 'strip_plot': str(strip_plot)},
                            summary)

    def cmd_sweep(self, parameter: str, values: Sequence[float], force: bool = False) -> Dict[str, Any]:
        """Full protocol per value of rho_p or eta, reusing the clean checkpoint."""
        values = [float(v) for v in values]
        cached = self._cached('sweep', force)
        if cached and cached.get('parameter') == parameter and cached.get('values') == values:
            return cached
        clean = self._load_clean()
        table = sweep(self.config, parameter, values, self.context, clean=clean)
        text = sweep_table(table)
        labelled, gaps = sweep_reports(table)
        self.store.save_text(f'sweep_{parameter}', text)
        self.store.save_report(f'sweep_{parameter}', {
            'parameter': parameter,
            'cells': [{'value': c.value, 'error': c.error,
                       'report': c.report.to_dict() if c.report else None} for c in table.cells]})
        write_reports_csv(self.store.csv_path(f'sweep_{parameter}'), labelled, gaps)
        self.log.info("\n" + text)
        if table.gaps:
            self.log.warning(f"⚠️ Sweep gaps at {parameter} = {table.gaps}")
        summary = {'parameter': parameter, 'values': values, 'gaps': table.gaps}
        return self._finish('sweep', {'table': str(self.store.reports_dir / f'sweep_{parameter}.txt')},
                            summary)

    def cmd_ablate(self, force: bool = False) -> Dict[str, Any]:
        """Ours / w/o Unlearn / w/o Mitigation on the same clean surrogate."""
        cached = self._cached('ablate', force)
        if cached:
            return cached
        clean = self._load_clean()
        for variant in ABLATION_VARIANTS:
            self.store.start_csv(self._ablation_csv(variant))
        results = ablation(self.config, self.context, clean=clean,
                           on_round=lambda variant, row: self.store.append_csv(
                               self._ablation_csv(variant), row))
        text = ablation_table(results)
        self.store.save_text('ablation', text)
        self.store.save_report('ablation', {k: r.to_dict() for k, r in results.items()})
        write_reports_csv(self.store.csv_path('ablation'), results)
        self.log.info("\n" + text)
        summary = {name: {'asr': r.asr, 'asr_u': r.asr_u, 'ba': r.ba, 'ba_u': r.ba_u}
                   for name, r in results.items()}
        return self._finish('ablate', {'table': str(self.store.reports_dir / 'ablation.txt')}, summary)

    @staticmethod
    def _ablation_csv(variant: str) -> str:
        slug = variant.lower().replace('w/o ', 'without_').replace(' ', '_')
        return f"ablation_rounds__{slug}"

    def cmd_plot(self) -> Dict[str, Any]:
        """Regenerate every plot from the CSV logs in the run directory."""
        csv_rows = {path.stem: self.store.read_csv(path.stem)
                    for path in sorted(self.store.csv_dir.glob('*.csv'))
                    if '.' not in path.stem}
        written = plots.regenerate_plots(csv_rows, self.store.plots_dir,
                                         bins=self.config.defense.histogram_bins)
        self.log.info(f"🖼️ Wrote {len(written)} plots to {self.store.plots_dir}")
        return {'plots': [str(p) for p in written]}

    def status(self) -> Dict[str, Any]:
        """Stage states (complete / stale / missing) for the current config hash."""
        stages = self.store.status()
        for stage, state in stages.items():
            icon = {'complete': '✅', 'stale': '⚠️', 'missing': '⬜'}[state]
            self.log.info(f"{icon} {stage}: {state}")
        return {'config_hash': self.config_hash, 'run_dir': str(self.run_dir), 'stages': stages}

    def load_partition(self) -> DataPartition:
        """Partition recorded by pretrain (the one every later stage uses)."""
        self.store.require('pretrain')
        return DataPartition.load(self.run_dir / 'partition.json')

    def _check_partition(self) -> DataPartition:
        """The recorded partition must be the one this config rebuilds."""
        recorded = self.load_partition()
        rebuilt = self.context.partition
        if recorded.to_manifest() != rebuilt.to_manifest():
            raise StaleArtifactError("partition.json differs from the partition rebuilt for this "
                                     "config; rerun pretrain with --force",
                                     {'recorded_poison': recorded.num_poison,
                                      'rebuilt_poison': rebuilt.num_poison})
        return recorded
