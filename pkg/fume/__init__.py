"""fume/__init__.py."""

import logging
from typing import Optional, Type

__version__ = "0.1.0"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(settings: Optional[Type] = None) -> logging.Logger:
    """Configure root logging from an environment settings class."""
    if settings is None:
        from .config.settings import get_settings
        settings = get_settings()

    root = logging.getLogger()
    root.setLevel(getattr(logging, str(settings.LOG_LEVEL).upper(), logging.INFO))

    # Replace handlers installed by a previous call
    for handler in list(root.handlers):
        if getattr(handler, "_fume_handler", False):
            root.removeHandler(handler)

    handlers = [logging.StreamHandler()]
    if settings.LOG_FILE:
        handlers.append(logging.FileHandler(settings.LOG_FILE))
    for handler in handlers:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._fume_handler = True
        root.addHandler(handler)

    logger = logging.getLogger("fume")
    logger.debug(f"Logging configured ({settings.__name__}, level {settings.LOG_LEVEL})")
    return logger
