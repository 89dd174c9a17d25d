"""Metrics, the attack -> revoke protocol, report tables and plots.

Only the metrics are re-exported here; protocol, tables and plots are imported
by module path (protocol depends on the unlearning module, which depends on
these metrics).
"""

from .metrics import MetricsReport, asr_from_predictions, attack_success_rate, benign_accuracy

__all__ = ['MetricsReport', 'asr_from_predictions', 'attack_success_rate', 'benign_accuracy']
