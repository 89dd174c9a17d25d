"""Poison/forget partition and the mixed training set."""

import pytest
import torch

from revoke_bd.attack.trigger import TriggerGenerator
from revoke_bd.config import TriggerConfig
from revoke_bd.data.partition import (DataPartition, make_partition, poison_count,
                                      redraw_forget_set)
from revoke_bd.data.poison import build_poisoned_set
from revoke_bd.errors import (CapacityError, ContractError, NestingError,
                              PartitionIndexError)
from revoke_bd.models.generator import GeneratorNet


@pytest.fixture
def stratified_labels():
    # 10000 samples, 1000 per class
    return torch.arange(10000) % 10


def test_desk_scale_partition_sizes(stratified_labels):
    part = make_partition(stratified_labels, target_label=0, rho_p=0.01, rho_f_count=5, seed=0)
    assert part.num_poison == 100
    assert part.num_forget == 5
    assert set(part.forget_indices) <= set(part.poison_indices)
    assert all(int(stratified_labels[i]) == 0 for i in part.poison_indices)
    part.check(stratified_labels)


def test_partition_is_deterministic_in_the_seed(stratified_labels):
    a = make_partition(stratified_labels, 0, 0.01, 5, seed=3)
    b = make_partition(stratified_labels, 0, 0.01, 5, seed=3)
    c = make_partition(stratified_labels, 0, 0.01, 5, seed=4)
    assert a.to_json() == b.to_json()
    assert a.poison_indices != c.poison_indices


def test_forget_sets_are_nested_across_counts(stratified_labels):
    small = make_partition(stratified_labels, 0, 0.01, 5, seed=0)
    large = make_partition(stratified_labels, 0, 0.01, 50, seed=0)
    assert small.poison_indices == large.poison_indices
    assert set(small.forget_indices) <= set(large.forget_indices)


def test_poison_count_rounds_half_up():
    assert poison_count(0.25, 10) == 3
    assert poison_count(0.01, 10000) == 100
    assert poison_count(0.04, 10) == 0


def test_capacity_and_nesting_errors(stratified_labels):
    with pytest.raises(CapacityError):
        make_partition(stratified_labels, 0, 0.2, 5, seed=0)
    with pytest.raises(NestingError):
        make_partition(stratified_labels, 0, 0.01, 101, seed=0)
    with pytest.raises(ContractError):
        make_partition(stratified_labels, 0, 0.0, 0, seed=0)
    with pytest.raises(ContractError):
        make_partition(stratified_labels, 0, 0.01, -1, seed=0)


def test_zero_forget_count_is_allowed(stratified_labels):
    part = make_partition(stratified_labels, 2, 0.01, 0, seed=0)
    assert part.num_forget == 0
    assert part.num_poison == 100


def test_check_catches_mismatches(stratified_labels):
    part = make_partition(stratified_labels, 0, 0.01, 5, seed=0)
    with pytest.raises(PartitionIndexError):
        part.check(stratified_labels[:5000])
    relabelled = stratified_labels.clone()
    relabelled[part.poison_indices[0]] = 1
    with pytest.raises(ContractError):
        part.check(relabelled)
    broken = DataPartition(target_label=0, poison_indices=part.poison_indices,
                           forget_indices=(1,), rho_p=0.01, rho_f_count=1, seed=0,
                           train_size=10000)
    with pytest.raises(NestingError):
        broken.check(stratified_labels)


def test_save_and_load(tmp_path, stratified_labels):
    part = make_partition(stratified_labels, 4, 0.01, 5, seed=9)
    path = tmp_path / 'nested' / 'partition.json'
    part.save(path)
    loaded = DataPartition.load(path)
    assert set(loaded.poison_indices) == set(part.poison_indices)
    assert loaded.to_manifest() == part.to_manifest()


def test_redrawn_forget_set_stays_inside_poison_set(stratified_labels):
    part = make_partition(stratified_labels, 0, 0.01, 5, seed=0)
    rounds = [redraw_forget_set(part, r) for r in range(4)]
    for r, redrawn in enumerate(rounds):
        assert redrawn.round_index == r
        assert redrawn.poison_indices == part.poison_indices
        assert len(set(redrawn.forget_indices)) == 5
        assert set(redrawn.forget_indices) <= set(part.poison_indices)
    assert redraw_forget_set(part, 2).forget_indices == rounds[2].forget_indices
    assert len({r.forget_indices for r in rounds}) > 1


class TestPoisonedSet:

    @pytest.fixture
    def trigger(self):
        torch.manual_seed(0)
        return TriggerGenerator(GeneratorNet(3, 1), TriggerConfig(sigma_mode='fixed'), (3, 16, 16))

    def test_only_poison_entries_change(self, synthetic_dataset, trigger):
        part = make_partition(synthetic_dataset, 0, 0.05, 5, seed=0)
        mixed = build_poisoned_set(synthetic_dataset, part, trigger, batch_size=7)
        assert mixed.num_poisoned == part.num_poison == 20
        assert torch.equal(mixed.labels, synthetic_dataset.train_labels)
        clean = ~mixed.is_poisoned
        assert torch.equal(mixed.images[clean], synthetic_dataset.train_images[clean])
        idx = torch.tensor(part.poison_indices)
        assert not torch.equal(mixed.images[idx], synthetic_dataset.train_images[idx])
        assert mixed.trigger_id == trigger.snapshot_id()

    def test_forget_set_is_a_slice_of_the_mixed_set(self, synthetic_dataset, trigger):
        part = make_partition(synthetic_dataset, 3, 0.05, 5, seed=1)
        mixed = build_poisoned_set(synthetic_dataset, part, trigger)
        images, labels = mixed.forget_set()
        assert images.shape == (5, 3, 16, 16)
        assert bool((labels == 3).all())
        poison_images, _ = mixed.poison_set()
        assert poison_images.shape[0] == 20

    def test_rebuilding_is_deterministic(self, synthetic_dataset, trigger):
        part = make_partition(synthetic_dataset, 0, 0.05, 5, seed=0)
        a = build_poisoned_set(synthetic_dataset, part, trigger)
        b = build_poisoned_set(synthetic_dataset, part, trigger)
        assert torch.equal(a.images, b.images)

    def test_partition_for_another_dataset_is_rejected(self, synthetic_dataset, trigger):
        part = make_partition(torch.arange(1000) % 10, 0, 0.01, 5, seed=0)
        with pytest.raises(PartitionIndexError):
            build_poisoned_set(synthetic_dataset, part, trigger)
