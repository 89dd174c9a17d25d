"""Trigger function: bounds, frequency support, blur and determinism."""

import dataclasses

import numpy as np
import pytest
import torch

from revoke_bd.attack.frequency import dct2
from revoke_bd.attack.trigger import TriggerGenerator, apply_trigger, blur, bound_noise
from revoke_bd.config import TriggerConfig
from revoke_bd.errors import ConfigError, ContractError
from revoke_bd.models.generator import GeneratorNet


@pytest.fixture
def images():
    torch.manual_seed(5)
    return torch.randn(6, 3, 8, 8, dtype=torch.float64)


def test_zero_eta_without_blur_is_identity(tiny_trigger, images):
    config = dataclasses.replace(tiny_trigger.config, eta=0.0, blur_enabled=False)
    out = apply_trigger(images, tiny_trigger.net, config)
    assert torch.equal(out, images)


def test_noise_is_bounded_and_band_limited(tiny_trigger, images):
    noise = tiny_trigger.noise(images)
    assert noise.abs().max() <= 1.0 + 1e-12
    outside = dct2(noise) * (1 - tiny_trigger.mask)
    assert outside.abs().max() <= 1e-6
    perturbation = tiny_trigger.config.eta * noise
    assert perturbation.abs().max() <= tiny_trigger.config.eta + 1e-12


def test_bound_noise_only_rescales_large_images():
    small = torch.full((1, 1, 2, 2), 0.5)
    large = torch.tensor([[[[4.0, -2.0], [1.0, 0.0]]]])
    assert torch.equal(bound_noise(small), small)
    assert torch.allclose(bound_noise(large), large / 4.0)


def test_blur_kernel_preserves_constant_images():
    flat = torch.full((1, 3, 8, 8), 0.3, dtype=torch.float64)
    assert torch.allclose(blur(flat, 3, 0.55), flat, atol=1e-12)


def test_perturbation_grows_with_eta(tiny_trigger, images):
    baseline = blur(images, 3, tiny_trigger.config.fixed_sigma)
    norms = []
    for eta in (0.0, 0.02, 0.08, 0.2):
        config = dataclasses.replace(tiny_trigger.config, eta=eta)
        out = apply_trigger(images, tiny_trigger.net, config)
        norms.append(float((out - baseline).norm()))
    assert all(b >= a - 1e-12 for a, b in zip(norms, norms[1:]))


def test_eval_mode_is_deterministic(tiny_trigger, images):
    tiny_trigger.eval()
    with torch.no_grad():
        assert torch.equal(tiny_trigger(images), tiny_trigger(images))


def test_negative_eta_is_a_config_error(tiny_trigger, images):
    config = dataclasses.replace(tiny_trigger.config, eta=-0.1)
    with pytest.raises(ConfigError):
        apply_trigger(images, tiny_trigger.net, config)
    with pytest.raises(ConfigError):
        TriggerGenerator(GeneratorNet(3, 1), config, (3, 8, 8))


def test_wrong_channel_count_is_a_contract_error(tiny_trigger):
    with pytest.raises(ContractError):
        apply_trigger(torch.zeros(2, 1, 8, 8, dtype=torch.float64), tiny_trigger.net,
                      tiny_trigger.config)


def test_output_is_clamped_to_normalized_range():
    torch.manual_seed(0)
    lo = torch.full((3, 1, 1), -1.0)
    hi = torch.full((3, 1, 1), 1.0)
    trigger = TriggerGenerator(GeneratorNet(3, 2), TriggerConfig(eta=0.5), (3, 8, 8),
                               clamp_range=(lo, hi))
    x = torch.randn(4, 3, 8, 8) * 3
    out = trigger(x)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_sigma_sampling(tiny_trigger):
    rng = np.random.default_rng(0)
    assert tiny_trigger.sample_sigma(rng) == pytest.approx(0.55)
    sampled = TriggerGenerator(GeneratorNet(3, 1), TriggerConfig(sigma_mode='sampled'), (3, 8, 8))
    values = [sampled.sample_sigma(rng) for _ in range(50)]
    assert all(0.1 <= v <= 1.0 for v in values)
    assert len(set(values)) > 1


def test_apply_batched_matches_forward(tiny_trigger, images):
    tiny_trigger.eval()
    with torch.no_grad():
        direct = tiny_trigger(images)
    batched = tiny_trigger.apply_batched(images, batch_size=4)
    assert batched.device.type == 'cpu'
    assert torch.allclose(batched, direct, atol=1e-12)


def test_snapshot_id_tracks_parameters(tiny_trigger):
    before = tiny_trigger.snapshot_id()
    assert tiny_trigger.snapshot_id() == before
    with torch.no_grad():
        tiny_trigger.net.head.bias.add_(0.1)
    assert tiny_trigger.snapshot_id() != before


def test_generator_gradients_reach_every_parameter(tiny_trigger, images):
    tiny_trigger.train()
    tiny_trigger(images).pow(2).sum().backward()
    grads = [p.grad for p in tiny_trigger.parameters()]
    assert all(g is not None for g in grads)
