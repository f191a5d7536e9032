"""
Logging utilities for the solver package.
"""

import logging
from typing import Optional

from domdec.core.config import settings

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class LoggerFactory:
    """Factory class for creating configured loggers."""

    _configured: bool = False

    @classmethod
    def setup_logging(
        cls,
        level: Optional[str] = None,
        format_string: Optional[str] = None,
        force: bool = False,
    ) -> None:
        """Configure root logging once; later calls are no-ops unless forced.

        Args:
            level: Level name; defaults to ``settings.LOG_LEVEL``
            format_string: Record format; defaults to ``DEFAULT_FORMAT``
            force: Reconfigure even if logging was already set up
        """
        if cls._configured and not force:
            return

        level_name = (level or settings.LOG_LEVEL).upper()
        logging.basicConfig(
            format=format_string or DEFAULT_FORMAT,
            level=getattr(logging, level_name, logging.INFO),
            force=True,
        )
        cls._configured = True

    @classmethod
    def get_logger(cls, name: str) -> logging.Logger:
        """Get a logger with the specified name."""
        if not cls._configured:
            cls.setup_logging()
        return logging.getLogger(name)
