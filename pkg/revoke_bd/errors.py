"""
Exceptions for revoke-bd.

Every error raised on purpose by the package derives from RevokeBDError, so the
CLI can catch one type, log it and exit non-zero. Like the HTTP errors of a
service client, each error carries a human message plus an optional details
dict for debugging (shapes, counts, offending values).

Example: CapacityError("need 2500 target samples, have 900",
                       details={'required': 2500, 'available': 900})
"""

from typing import Any, Dict, Optional


class RevokeBDError(Exception):
    """Base class for all revoke-bd errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': self.__class__.__name__,
            'message': self.message,
            'details': self.details,
        }


class ConfigError(RevokeBDError):
    """Invalid configuration value."""


class ContractError(RevokeBDError):
    """A precondition or shape contract was violated."""


class EmptySplitError(ContractError):
    """A dataset split would be empty."""


class CapacityError(ContractError):
    """Not enough target-class samples for the requested poison set."""


class NestingError(ContractError):
    """Forget set would not fit inside the poison set."""


class PartitionIndexError(ContractError, IndexError):
    """Partition refers to samples outside the dataset."""


class DegenerateProjectionError(ContractError):
    """Conflict flagged against a zero attack gradient."""


class UndefinedCosineError(ContractError):
    """Cosine similarity requested for a zero vector."""


class NumericalFaultError(RevokeBDError):
    """NaN or Inf showed up in an input, output, loss or gradient."""


class DatasetLoadError(RevokeBDError):
    """Dataset files are missing and could not be downloaded."""


class CorruptDataError(RevokeBDError):
    """Dataset content is inconsistent with its spec (e.g. labels out of range)."""


class TrainingAbortedError(RevokeBDError):
    """Bilevel optimization gave up after repeated round failures."""


class DependencyError(RevokeBDError):
    """An upstream stage has not been run yet."""

    def __init__(self, message: str, required_command: str = "",
                 details: Optional[Dict[str, Any]] = None):
        self.required_command = required_command
        super().__init__(message, details)


class StaleArtifactError(RevokeBDError):
    """An upstream artifact was produced under a different config hash."""


class TrainingFailureWarning(UserWarning):
    """Clean training finished below the accuracy floor."""
