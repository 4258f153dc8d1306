"""Worker-count resolution shared by the search and the Monte Carlo harness."""

from __future__ import annotations

import os
from typing import Optional

from .errors import ConfigurationError

ENV_VAR = "MOLCHAN_THREADS"


def resolve_workers(requested: Optional[int] = None) -> int:
    """Number of worker processes; ``requested`` wins over ``MOLCHAN_THREADS``, 0 means auto."""
    if requested is None:
        raw = os.environ.get(ENV_VAR, "0").strip() or "0"
        try:
            requested = int(raw)
        except ValueError:
            raise ConfigurationError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ConfigurationError("worker count must be >= 0")
    if requested == 0:
        return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
    return requested
