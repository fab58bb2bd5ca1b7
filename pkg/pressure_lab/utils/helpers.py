import logging
import math
import os
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from pressure_lab.core.errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = 'PRESSURE_LAB_THREADS'


def pairwise_logsumexp(values: Sequence[float]) -> float:
    """
    Merge partial log-sums with a fixed binary tree.

    The merge order depends only on len(values), so the result is independent
    of how many workers produced the partial sums.
    """
    items = [float(v) for v in values]
    if not items:
        return -math.inf
    while len(items) > 1:
        merged = []
        for i in range(0, len(items) - 1, 2):
            merged.append(float(np.logaddexp(items[i], items[i + 1])))
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def chunked_logsumexp(values: np.ndarray, chunk: int = 4096) -> float:
    """Log-sum-exp over fixed-size chunks, combined pairwise."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return -math.inf
    partial = [float(logsumexp(values[i:i + chunk])) for i in range(0, values.size, chunk)]
    return pairwise_logsumexp(partial)


def resolve_threads(requested: Optional[int] = None) -> int:
    """
    Thread count from the flag, else PRESSURE_LAB_THREADS, else 1.

    Raises:
        ConfigError: If the flag or the variable asks for fewer than one thread,
            or the variable is not an integer
    """
    if requested is not None:
        if requested < 1:
            raise ConfigError(f"threads must be >= 1, got {requested}", threads=requested)
        return int(requested)
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}", threads=raw) from None
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {threads}", threads=threads)
    return threads


def batched(items: Sequence, size: int) -> Iterator[Sequence]:
    for i in range(0, len(items), size):
        yield items[i:i + size]
