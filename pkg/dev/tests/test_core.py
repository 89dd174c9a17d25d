"""Stage commands, caching and the command-line entry point."""

import dataclasses
import json
import signal
from pathlib import Path

import pytest

from revoke_bd.__main__ import build_parser, main, parse_overrides
from revoke_bd.config import ExperimentConfig
from revoke_bd.core import ExperimentCore
from revoke_bd.errors import ConfigError, DependencyError, StaleArtifactError
from revoke_bd.logger import Logger


@pytest.fixture
def core(smoke_config):
    return ExperimentCore(smoke_config, Logger())


def test_init_writes_config_and_layout(core, smoke_config):
    saved = json.loads((core.run_dir / 'config.json').read_text())
    assert saved['dataset']['name'] == 'synthetic'
    assert core.store.logs_dir.is_dir()
    status = core.status()
    assert status['config_hash'] == smoke_config.config_hash()
    assert set(status['stages'].values()) == {'missing'}


def test_downstream_stage_without_upstream(core):
    with pytest.raises(DependencyError) as info:
        core.cmd_revoke()
    assert info.value.required_command == 'attack'
    with pytest.raises(DependencyError):
        core.cmd_train_generator()
    with pytest.raises(DependencyError):
        core.load_partition()


def test_changed_config_makes_upstream_stale(core, smoke_config):
    core.store.save_stage('pretrain', summary={'clean_accuracy': 60.0})
    changed = smoke_config.copy()
    changed.trigger.eta = 0.1
    other = ExperimentCore(changed, Logger())
    assert other.status()['stages']['pretrain'] == 'stale'
    with pytest.raises(StaleArtifactError):
        other.cmd_train_generator()


def test_tampered_partition_file_is_rejected(core):
    partition = core.context.partition
    core.store.save_stage('pretrain', summary={'clean_accuracy': 60.0})
    partition.save(core.run_dir / 'partition.json')
    assert core._check_partition().to_manifest() == partition.to_manifest()

    dataclasses.replace(partition, forget_indices=partition.forget_indices[:-1]).save(
        core.run_dir / 'partition.json')
    with pytest.raises(StaleArtifactError):
        core._check_partition()


def test_ablation_csv_names():
    assert ExperimentCore._ablation_csv('Ours') == 'ablation_rounds__ours'
    assert ExperimentCore._ablation_csv('w/o Unlearn') == 'ablation_rounds__without_unlearn'
    assert ExperimentCore._ablation_csv('w/o Mitigation') == 'ablation_rounds__without_mitigation'


@pytest.mark.slow
def test_smoke_pipeline_end_to_end(core):
    pretrain = core.cmd_pretrain()
    assert pretrain['cached'] is False
    assert pretrain['num_poison'] == 20 and pretrain['num_forget'] == 5
    assert core.load_partition().poison_indices == tuple(sorted(core.context.partition.poison_indices))

    generator = core.cmd_train_generator()
    assert generator['rounds'] == 2 and generator['steps'] == 6
    assert len(core.store.read_csv('bilevel_rounds')) == 2
    assert len(core.store.read_csv('bilevel_steps')) == 6

    attack = core.cmd_attack()
    assert 0.0 <= attack['asr'] <= 100.0
    assert attack['num_poisoned'] == 20
    assert core.store.plot_path('poison_grid').exists()
    again = core.cmd_attack()
    assert again['cached'] is True and again['asr'] == attack['asr']

    revoke = core.cmd_revoke()
    assert revoke['num_forget'] == 5
    assert revoke['asr'] == pytest.approx(attack['asr'])

    evaluate = core.cmd_evaluate()
    assert evaluate['delta'] == pytest.approx(evaluate['asr_u'] - evaluate['asr'])
    assert evaluate['config_hash'] == core.config_hash
    assert (core.store.reports_dir / 'metrics.txt').exists()

    defend = core.cmd_defend()
    assert defend['total_channels'] == 16
    assert defend['final_pruned'] == 16
    assert len(core.store.read_csv('strip_entropy')) == 16

    written = core.cmd_plot()['plots']
    names = {Path(p).name for p in written}
    assert {'conflict_trace.png', 'prune_curve.png', 'strip_entropy.png'} <= names
    assert core.status()['stages']['defend'] == 'complete'


class TestCli:

    @pytest.fixture(autouse=True)
    def isolated(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setattr(signal, 'signal', lambda *args: None)
        for var in ('REVOKE_BD_DATA', 'REVOKE_BD_DEVICE', 'REVOKE_BD_OUTPUT'):
            monkeypatch.delenv(var, raising=False)

    def test_parser(self):
        args = build_parser().parse_args(['sweep', '-c', 'x.json', '--parameter', 'eta',
                                          '--values', '0.02', '0.08'])
        assert args.values == [0.02, 0.08] and args.force is False
        with pytest.raises(SystemExit):
            build_parser().parse_args(['sweep', '-c', 'x.json', '--parameter', 'alpha',
                                       '--values', '1'])

    def test_init_then_status(self, tmp_path):
        path = tmp_path / 'smoke.json'
        assert main(['init', '--config', str(path), '--preset', 'smoke', '--seed', '3']) == 0
        config = ExperimentConfig(str(path))
        assert config.seed == 3 and config.dataset.name == 'synthetic'
        assert main(['status', '--config', str(path)]) == 0
        assert (tmp_path / 'runs' / 'smoke' / 'config.json').exists()

    def test_errors_exit_with_one(self, tmp_path):
        assert main(['pretrain', '--config', str(tmp_path / 'missing.json')]) == 1
        path = tmp_path / 'smoke.json'
        main(['init', '--config', str(path), '--preset', 'smoke'])
        assert main(['revoke', '--config', str(path)]) == 1

    def test_set_overrides(self, tmp_path):
        assert parse_overrides(['trigger.eta=0.1', 'seed=4', 'dataset.name=synthetic']) == {
            'trigger': {'eta': 0.1}, 'seed': 4, 'dataset': {'name': 'synthetic'}}
        for bad in (['trigger.eta'], ['nosuch.key=1'], ['colour=red']):
            with pytest.raises(ConfigError):
                parse_overrides(bad)

        path = tmp_path / 'smoke.json'
        assert main(['init', '--config', str(path), '--preset', 'smoke',
                     '--set', 'trigger.eta=0.1', '--set', 'bilevel.outer_rounds=3']) == 0
        config = ExperimentConfig(str(path))
        assert config.trigger.eta == 0.1 and config.bilevel.outer_rounds == 3
        assert config.trigger.mask_ratio == ExperimentConfig.from_preset('smoke').trigger.mask_ratio
        assert main(['status', '--config', str(path), '--set', 'trigger.bogus=1']) == 1
