"""
Small regression and constant-fitting helpers built on scipy.stats.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    r_value: float
    n: int


def fit_slope(x: Sequence[float], y: Sequence[float], confidence: float = 0.95) -> SlopeFit:
    """
    Least-squares slope of y against x with a t-distribution confidence interval.

    Two points give an exact line with zero standard error.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("Need at least two points to fit a slope")
    if x.size == 2:
        slope = float((y[1] - y[0]) / (x[1] - x[0]))
        return SlopeFit(slope, float(y[0] - slope * x[0]), 0.0, slope, slope, 1.0, 2)
    result = stats.linregress(x, y)
    dof = x.size - 2
    half = float(stats.t.ppf(0.5 + confidence / 2.0, dof)) * float(result.stderr)
    return SlopeFit(slope=float(result.slope), intercept=float(result.intercept),
                    stderr=float(result.stderr), ci_low=float(result.slope) - half,
                    ci_high=float(result.slope) + half, r_value=float(result.rvalue), n=int(x.size))


def isotonic_increasing(values: Sequence[float], weights: Sequence[float] = None) -> np.ndarray:
    """Least-squares non-decreasing fit (pool adjacent violators)."""
    v = np.asarray(values, dtype=float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    blocks: List[List[float]] = []   # [mean, weight, count]
    for value, weight in zip(v, w):
        blocks.append([value, weight, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, c2 = blocks.pop()
            m1, w1, c1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2])
    out: List[float] = []
    for mean, _, count in blocks:
        out.extend([mean] * count)
    return np.asarray(out)


@dataclass
class RunningConstant:
    """
    Empirical constant fitted as a running max (upper bounds) or running
    min (lower bounds); enlarging the sample never loosens the fit.
    """
    mode: str = 'max'
    value: float = field(default=math.nan)
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ('max', 'min'):
            raise ValueError("mode must be 'max' or 'min'")

    def update(self, samples) -> float:
        samples = np.asarray(samples, dtype=float)
        samples = samples[np.isfinite(samples)]
        if samples.size:
            candidate = float(samples.max() if self.mode == 'max' else samples.min())
            if math.isnan(self.value):
                self.value = candidate
            elif self.mode == 'max':
                self.value = max(self.value, candidate)
            else:
                self.value = min(self.value, candidate)
        self.history.append(self.value)
        return self.value

    @property
    def monotone(self) -> bool:
        h = [v for v in self.history if not math.isnan(v)]
        if self.mode == 'max':
            return all(b >= a for a, b in zip(h, h[1:]))
        return all(b <= a for a, b in zip(h, h[1:]))
