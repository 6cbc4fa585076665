import logging
import os
from typing import Optional

import torch

from config.settings import LOG_FILE, LOG_LEVEL


def init_logging(level: Optional[str] = None, log_file: Optional[str] = LOG_FILE):
    """Initialize logging configuration"""
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def configure_torch(deterministic: bool = True) -> None:
    """Use 64-bit floats by default and pin reduction orders."""
    torch.set_default_dtype(torch.float64)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def default_workers() -> int:
    """Available parallelism for the certification pool."""
    return max(1, os.cpu_count() or 1)
