"""ASR and BA on hand-built fixtures with known answers."""

import pytest
import torch

from revoke_bd.errors import ContractError
from revoke_bd.evaluation.metrics import (MetricsReport, asr_from_predictions,
                                          attack_success_rate, benign_accuracy)

from .helpers import LookupClassifier

TARGET = 0


class StampTrigger:
    """Writes the target class into pixel [0, 0, 0] of the listed samples only."""

    def __init__(self, images: torch.Tensor, hits):
        self.hit_rows = {tuple(images[i].flatten().tolist()) for i in hits}

    def apply_batched(self, images, batch_size=256):
        out = images.clone()
        for i, image in enumerate(images):
            if tuple(image.flatten().tolist()) in self.hit_rows:
                out[i, 0, 0, 0] = float(TARGET)
        return out


@pytest.fixture
def fixture_set():
    # 10 samples: true labels, and what the lookup model predicts on the clean input
    labels = torch.tensor([0, 1, 2, 3, 4, 5, 6, 7, 8, 0])
    clean_preds = torch.tensor([0, 1, 2, 9, 4, 5, 1, 7, 8, 3])
    images = torch.zeros(10, 1, 2, 2)
    images[:, 0, 0, 0] = clean_preds.float()
    images[:, 0, 1, 1] = torch.arange(10).float()  # makes every image distinct
    return images, labels


def test_benign_accuracy_matches_brute_force(fixture_set):
    images, labels = fixture_set
    model = LookupClassifier()
    # correct: indices 0,1,2,4,5,7,8 -> 7 of 10
    assert benign_accuracy(model, images, labels) == pytest.approx(70.0)
    assert benign_accuracy(model, images, labels, batch_size=3) == pytest.approx(70.0)


def test_asr_counts_only_non_target_samples(fixture_set):
    images, labels = fixture_set
    model = LookupClassifier()
    # triggers work on samples 1, 3, 6 and on sample 0 (which is already target class)
    trigger = StampTrigger(images, hits=[0, 1, 3, 6])
    # eligible: 8 samples with label != 0, hits among them: 1, 3, 6
    assert attack_success_rate(model, trigger, images, labels, TARGET) == pytest.approx(37.5)


def test_asr_from_predictions():
    labels = torch.tensor([0, 1, 1, 2])
    preds = torch.tensor([0, 0, 1, 0])
    assert asr_from_predictions(preds, labels, 0) == pytest.approx(100.0 * 2 / 3)
    with pytest.raises(ContractError):
        asr_from_predictions(preds, torch.zeros(4, dtype=torch.long), 0)


def test_empty_inputs_are_rejected(fixture_set):
    images, labels = fixture_set
    model = LookupClassifier()
    with pytest.raises(ContractError):
        benign_accuracy(model, images[:0], labels[:0])
    only_target = labels.clone().zero_()
    with pytest.raises(ContractError):
        attack_success_rate(model, StampTrigger(images, []), images, only_target, TARGET)


def test_metrics_report_delta_and_bounds():
    report = MetricsReport(asr=12.5, asr_u=91.0, ba=80.0, ba_u=79.5, dataset='cifar10',
                           simulation_method='unroll_sgd', revocation_method='first_order')
    assert report.delta == pytest.approx(78.5)
    data = report.to_dict()
    assert data['delta'] == pytest.approx(78.5)
    assert MetricsReport.from_dict(data) == report
    with pytest.raises(ContractError):
        MetricsReport(asr=101.0, asr_u=0.0, ba=50.0, ba_u=50.0)
