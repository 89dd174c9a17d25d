"""
revoke-bd - Revocable backdoors for deep classifiers.
Trains a frequency-domain trigger generator whose backdoor survives normal
training and disappears once the poisoned samples are unlearned, plus the
attack -> revoke evaluation protocol and the defense harnesses around it.
"""

__version__ = "0.3.0"
__app_name__ = "revoke-bd"

from .config import ExperimentConfig
from .logger import Logger
