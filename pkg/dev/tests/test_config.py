"""Configuration presets, persistence, overrides and validation."""

import json

import pytest

from revoke_bd.config import PRESETS, ExperimentConfig, TriggerConfig
from revoke_bd.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ('REVOKE_BD_DATA', 'REVOKE_BD_DEVICE', 'REVOKE_BD_OUTPUT'):
        monkeypatch.delenv(var, raising=False)


def test_defaults_are_the_desk_scale_setup():
    config = ExperimentConfig()
    assert config.dataset.name == 'cifar10'
    assert config.dataset.train_limit == 10000
    assert config.trigger.eta == 0.08
    assert config.trigger.mask_ratio == 0.65
    assert config.trigger.blur_kernel_size == 3
    assert config.trigger.sigma_range == [0.1, 1.0]
    assert config.loss_weights.lambda_unlearn == 1.0
    assert config.loss_weights.lambda_vis == 0.02
    assert config.loss_weights.lambda_non_adv == 0.8
    assert config.bilevel.alpha == 0.6
    assert config.bilevel.mitigation
    config.validate()


@pytest.mark.parametrize('name', sorted(PRESETS))
def test_presets_validate(name):
    config = ExperimentConfig.from_preset(name)
    config.validate()
    assert config.output_dir == f"runs/{name}"


def test_smoke_preset_merges_sections():
    config = ExperimentConfig.from_preset('smoke')
    assert config.dataset.name == 'synthetic'
    assert config.dataset.num_classes == 10
    assert config.bilevel.outer_rounds == 2
    assert config.bilevel.alpha == 0.6
    with pytest.raises(ConfigError):
        ExperimentConfig.from_preset('huge')


def test_hash_ignores_output_dir_but_not_settings():
    a = ExperimentConfig.from_preset('smoke')
    b = ExperimentConfig.from_preset('smoke')
    b.output_dir = '/elsewhere'
    assert a.config_hash() == b.config_hash()
    b.trigger.eta = 0.1
    assert a.config_hash() != b.config_hash()
    assert len(a.config_hash()) == 16


def test_save_and_reload(tmp_path):
    config = ExperimentConfig.from_preset('smoke')
    config.seed = 7
    path = tmp_path / 'run' / 'config.json'
    config.save(str(path))
    reloaded = ExperimentConfig(str(path))
    assert reloaded.to_dict() == config.to_dict()
    assert reloaded.config_hash() == config.config_hash()
    assert json.loads(path.read_text())['seed'] == 7


def test_copy_is_independent():
    config = ExperimentConfig.from_preset('smoke')
    clone = config.copy()
    clone.bilevel.use_pcgrad = False
    assert config.bilevel.use_pcgrad


def test_update_merges_partial_sections():
    config = ExperimentConfig()
    config.update({'trigger': {'eta': 0.2}, 'seed': 3})
    assert config.trigger.eta == 0.2
    assert config.trigger.mask_ratio == 0.65
    assert config.seed == 3


def test_environment_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv('REVOKE_BD_DATA', str(tmp_path / 'data'))
    monkeypatch.setenv('REVOKE_BD_DEVICE', 'cpu')
    monkeypatch.setenv('REVOKE_BD_OUTPUT', str(tmp_path / 'out'))
    config = ExperimentConfig()
    assert config.dataset.root == str(tmp_path / 'data')
    assert config.device == 'cpu'
    assert config.output_dir == str(tmp_path / 'out')


def test_bad_files_and_sections(tmp_path):
    broken = tmp_path / 'broken.json'
    broken.write_text('{not json')
    with pytest.raises(ConfigError):
        ExperimentConfig(str(broken))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({'trigger': {'colour': 'red'}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({'trigger': 5})
    with pytest.raises(ConfigError):
        ExperimentConfig().save()


@pytest.mark.parametrize('change', [
    {'trigger': {'eta': -0.1}},
    {'trigger': {'mask_ratio': 0.0}},
    {'trigger': {'blur_kernel_size': 4}},
    {'trigger': {'sigma_range': [1.0, 0.1]}},
    {'loss_weights': {'lambda_vis': -1.0}},
    {'simulation_unlearn': {'method': 'retrain'}},
    {'evaluation_unlearn': {'step_size': 0.0}},
    {'partition': {'rho_p': 0.0}},
    {'partition': {'target_label': 10}},
    {'bilevel': {'alpha': 1.5}},
    {'bilevel': {'outer_rounds': 0}},
    {'dataset': {'name': 'imagenet'}},
    {'precision': 'float16'},
    {'device': 'tpu'},
])
def test_validation_errors(change):
    config = ExperimentConfig()
    config.update(change)
    with pytest.raises(ConfigError):
        config.validate()


def test_fixed_sigma_is_the_midpoint():
    assert TriggerConfig(sigma_range=[0.2, 0.6]).fixed_sigma == pytest.approx(0.4)
