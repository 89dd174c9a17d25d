"""Alternating bilevel optimization on the synthetic smoke setup."""

import copy
import dataclasses

import pytest
import torch

import revoke_bd.attack.bilevel as bilevel
from revoke_bd.attack.bilevel import alternate_optimize, frozen
from revoke_bd.data.datasets import load_dataset
from revoke_bd.data.partition import make_partition
from revoke_bd.errors import NumericalFaultError, TrainingAbortedError
from revoke_bd.evaluation.protocol import build_trigger
from revoke_bd.models.snapshot import differing_tensors, snapshot

from .helpers import ToyClassifier


@pytest.fixture
def setup(smoke_config):
    dataset = load_dataset(smoke_config.dataset, seed=0)
    partition = make_partition(dataset, 0, smoke_config.partition.rho_p,
                               smoke_config.partition.rho_f_count, seed=0)
    torch.manual_seed(0)
    model_clean = ToyClassifier(input_shape=(3, 16, 16)).eval()
    theta_clean = snapshot(model_clean, 'clean')
    trigger = build_trigger(smoke_config, dataset)
    return smoke_config, dataset, partition, model_clean, theta_clean, trigger


def test_smoke_run_produces_round_and_step_logs(setup):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    initial_id = trigger.snapshot_id()
    steps, rounds = [], []
    result = alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger,
                                on_step=steps.append, on_round=lambda row, _t: rounds.append(row))

    assert len(result.rounds) == len(rounds) == 2
    assert len(result.steps) == len(steps) == 6
    assert [row['step'] for row in result.steps] == list(range(6))
    assert len(result.trace.points) == 6
    assert result.failed_rounds == []
    for row in result.rounds:
        assert 0.0 <= row['surrogate_asr'] <= 100.0
        assert 0.0 <= row['surrogate_ba'] <= 100.0
        assert row['steps'] == 3
        assert row['forget_round'] == -1
        assert row['unlearn_monotone'] == (row['forget_loss_after'] >= row['forget_loss_before'])
        assert row['cosine_probe'] is None or -1.0 <= row['cosine_probe'] <= 1.0
    assert trigger.snapshot_id() != initial_id
    assert not trigger.training


def test_clean_model_is_never_updated(setup):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger)
    assert differing_tensors(theta_clean, snapshot(model_clean, 'clean')) == []


def test_projection_telemetry(setup):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    result = alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger)
    alpha = config.bilevel.alpha
    for row in result.steps:
        if row['projected']:
            assert row['inner_product'] < 0
            assert row['inner_after'] == pytest.approx((1 - alpha) * row['inner_product'],
                                                       rel=1e-3, abs=1e-8)
        else:
            assert row['inner_after'] == pytest.approx(row['inner_product'], rel=1e-6, abs=1e-12)


def test_without_mitigation_forget_set_is_redrawn_and_never_projected(setup):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    config.bilevel = dataclasses.replace(config.bilevel, fixed_partition=False, use_pcgrad=False)
    result = alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger)
    assert [row['forget_round'] for row in result.rounds] == [0, 1]
    assert not any(row['projected'] for row in result.steps)
    assert result.rounds[0]['mitigation'] is False


def test_failed_round_is_rolled_back(setup, monkeypatch):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    real = bilevel.inner_simulate_unlearning
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise NumericalFaultError("injected fault")
        return real(*args, **kwargs)

    monkeypatch.setattr(bilevel, 'inner_simulate_unlearning', flaky)
    after_first = {}
    result = alternate_optimize(
        config, dataset, partition, model_clean, theta_clean, trigger,
        on_round=lambda row, t: after_first.setdefault('state', copy.deepcopy(t.state_dict())))

    assert result.failed_rounds == [1]
    assert len(result.rounds) == 1
    assert len(result.trace.points) == 3
    for name, tensor in trigger.state_dict().items():
        assert torch.equal(tensor, after_first['state'][name])


def _fail_on_call(real, n):
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == n:
            raise NumericalFaultError("injected fault")
        return real(*args, **kwargs)
    return flaky


def test_faulting_outer_step_is_skipped_not_the_round(setup, monkeypatch):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    monkeypatch.setattr(bilevel, 'outer_generator_step', _fail_on_call(bilevel.outer_generator_step, 5))
    emitted = []
    result = alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger,
                                on_step=emitted.append)

    assert result.failed_rounds == []
    assert result.skipped_steps == [4]
    assert len(result.rounds) == 2
    assert [row['step'] for row in result.steps] == [0, 1, 2, 3, 5]
    assert emitted == result.steps
    assert len(result.trace.points) == len(result.steps)
    assert [p.step for p in result.trace.points] == [0, 1, 2, 3, 5]
    assert [row['steps'] for row in result.rounds] == [3, 2]
    assert [row['skipped_steps'] for row in result.rounds] == [0, 1]


def test_rolled_back_round_leaves_no_step_rows(setup, monkeypatch):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    # fails after round 1 already ran its outer steps
    monkeypatch.setattr(bilevel, 'probe_cosine', _fail_on_call(bilevel.probe_cosine, 2))
    emitted = []
    result = alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger,
                                on_step=emitted.append)

    assert result.failed_rounds == [1]
    assert len(result.steps) == len(emitted) == len(result.trace.points) == 3
    assert {row['round'] for row in emitted} == {0}
    assert len(result.trace.round_probe) == len(result.trace.round_step_mean) == 1


def test_round_where_every_step_faults_counts_as_failed(setup, monkeypatch):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    config.bilevel = dataclasses.replace(config.bilevel, max_consecutive_failures=2)

    def broken(*args, **kwargs):
        raise NumericalFaultError("injected fault")

    monkeypatch.setattr(bilevel, 'outer_generator_step', broken)
    with pytest.raises(TrainingAbortedError) as info:
        alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger)
    assert info.value.details['failed_rounds'] == [0, 1]


def test_consecutive_failures_abort(setup, monkeypatch):
    config, dataset, partition, model_clean, theta_clean, trigger = setup
    config.bilevel = dataclasses.replace(config.bilevel, max_consecutive_failures=2)

    def broken(*args, **kwargs):
        raise NumericalFaultError("injected fault")

    monkeypatch.setattr(bilevel, 'inner_simulate_unlearning', broken)
    with pytest.raises(TrainingAbortedError) as info:
        alternate_optimize(config, dataset, partition, model_clean, theta_clean, trigger)
    assert info.value.details['failed_rounds'] == [0, 1]


def test_frozen_restores_modes_and_flags():
    model = ToyClassifier().train()
    model.fc.bias.requires_grad_(False)
    with frozen(model):
        assert not model.training
        assert not any(p.requires_grad for p in model.parameters())
    assert model.training
    assert model.body.weight.requires_grad
    assert not model.fc.bias.requires_grad
