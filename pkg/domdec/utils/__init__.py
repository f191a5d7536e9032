"""
Init file for utils package.
"""

from .file_handler import FileHandler
from .logger import LoggerFactory
from .timing import PhaseTimer
from .validators import InputValidator

__all__ = [
    "FileHandler",
    "InputValidator",
    "LoggerFactory",
    "PhaseTimer",
]
