"""
Logging system for revoke-bd.
Console output with colors plus a per-run log file.
"""

import logging
import sys
from pathlib import Path
from typing import Optional


LOGGER_NAMESPACE = "revoke_bd"
LOG_FORMAT = '%(asctime)s | %(levelname)s | %(name)s | %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class ColorFormatter(logging.Formatter):
    """Colored formatter for console output."""

    COLORS = {
        'DEBUG': '\033[36m',     # Cyan
        'INFO': '\033[32m',      # Green
        'WARNING': '\033[33m',   # Yellow
        'ERROR': '\033[31m',     # Red
        'CRITICAL': '\033[35m',  # Magenta
    }
    RESET = '\033[0m'

    def format(self, record: logging.LogRecord) -> str:
        # Work on a copy so the file handler does not get escape codes
        record = logging.makeLogRecord(record.__dict__)
        color = self.COLORS.get(record.levelname, self.RESET)
        record.levelname = f"{color}{record.levelname:8}{self.RESET}"
        return super().format(record)


def get_logger(name: str) -> logging.Logger:
    """Get a named logger under the revoke_bd namespace."""
    return logging.getLogger(f"{LOGGER_NAMESPACE}.{name}")


class Logger:
    """
    Centralized logging manager.

    One instance per process. The first construction wires the handlers; later
    constructions return the same object, and attach_run_dir() can move the log
    file when a command switches run directories.
    """

    _instance = None

    def __new__(cls, *args, **kwargs):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self, log_dir: Optional[str] = None, debug: bool = False):
        if hasattr(self, '_initialized'):
            return
        self._initialized = True
        self.debug = debug
        self.log_dir: Optional[Path] = None
        self._file_handler: Optional[logging.FileHandler] = None

        root = logging.getLogger(LOGGER_NAMESPACE)
        root.setLevel(logging.DEBUG if debug else logging.INFO)
        root.propagate = False

        console = logging.StreamHandler(sys.stdout)
        console.setLevel(logging.DEBUG if debug else logging.INFO)
        console.setFormatter(ColorFormatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(console)

        if log_dir:
            self.attach_run_dir(log_dir)

    def attach_run_dir(self, log_dir: str):
        """Send the file log to <log_dir>/revoke_bd.log."""
        root = logging.getLogger(LOGGER_NAMESPACE)
        if self._file_handler is not None:
            root.removeHandler(self._file_handler)
            self._file_handler.close()

        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self._file_handler = logging.FileHandler(self.log_dir / "revoke_bd.log")
        self._file_handler.setLevel(logging.DEBUG)
        self._file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(self._file_handler)

    def get_logger(self, name: str) -> logging.Logger:
        """Get a named logger."""
        return get_logger(name)
