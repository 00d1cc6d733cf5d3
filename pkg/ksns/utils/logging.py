"""
Logging setup shared by the command line and the verification suites
"""

import logging
from typing import Optional

from ksns.core.config import get_settings

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: Optional[str] = None) -> logging.Logger:
    """Configure root logging once and return the package logger"""
    level = (level or get_settings().LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)
    logger = logging.getLogger("ksns")
    logger.setLevel(getattr(logging, level, logging.INFO))
    return logger
