"""Small statistics helpers shared by the probes and benchmarks."""

from __future__ import annotations

import math
import statistics
from typing import Dict, Sequence, Tuple


def binomial_ci(p0: float, n: int, z: float = 1.96) -> Tuple[float, float]:
    """Normal-approximation 95% interval around a baseline success rate.

    This is the acceptance band for guessing attacks: an attacker with no
    signal should land inside the interval around chance level ``p0``.
    """
    if n <= 0:
        raise ValueError("need at least one trial")
    half = z * math.sqrt(p0 * (1.0 - p0) / n)
    return (p0 - half, p0 + half)


def summarize(samples: Sequence[float]) -> Dict[str, float]:
    """min/max/median/mean/stdev over latency samples (same unit in as out)."""
    if not samples:
        raise ValueError("no samples")
    return {
        "min": min(samples),
        "max": max(samples),
        "median": statistics.median(samples),
        "mean": statistics.fmean(samples),
        "std": statistics.pstdev(samples) if len(samples) > 1 else 0.0,
    }


__all__ = ["binomial_ci", "summarize"]
