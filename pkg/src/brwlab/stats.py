"""Estimates with standard errors and small statistical helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class EstimateWithCI:
    """Point estimate with standard error, sample count and seed record."""

    value: float
    stderr: float
    count: int
    seed: dict | None = None
    estimator_kind: str = "direct"

    def __post_init__(self):
        if not self.stderr >= 0 and not math.isnan(self.stderr):
            raise ValueError("stderr must be non-negative")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        q = _st.norm.ppf(0.5 + level / 2)
        return self.value - q * self.stderr, self.value + q * self.stderr

    def overlaps(self, other: "EstimateWithCI", level: float = 0.95) -> bool:
        lo1, hi1 = self.interval(level)
        lo2, hi2 = other.interval(level)
        return lo1 <= hi2 and lo2 <= hi1

    def zscore(self, target: float, extra_se: float = 0.0) -> float:
        se = math.hypot(self.stderr, extra_se)
        diff = self.value - target
        if se == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / se

    def within(self, target: float, k: float = 4.0, extra_se: float = 0.0) -> bool:
        return abs(self.zscore(target, extra_se)) <= k

    def scaled(self, factor: float, kind: str | None = None) -> "EstimateWithCI":
        return EstimateWithCI(self.value * factor, self.stderr * abs(factor), self.count,
                              self.seed, kind or self.estimator_kind)

    @property
    def rel_stderr(self) -> float:
        return self.stderr / abs(self.value) if self.value else math.inf

    def to_dict(self) -> dict:
        return {"value": float(self.value), "stderr": float(self.stderr), "count": int(self.count),
                "estimator_kind": self.estimator_kind, "seed": self.seed}


def mean_estimate(samples, kind: str = "direct", seed: dict | None = None) -> EstimateWithCI:
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return EstimateWithCI(m, se, n, seed, kind)


def combined_z(a: EstimateWithCI, b: EstimateWithCI) -> float:
    se = math.hypot(a.stderr, b.stderr)
    d = a.value - b.value
    if se == 0:
        return 0.0 if d == 0 else math.inf
    return d / se


def ratio_estimate(num: EstimateWithCI, den: EstimateWithCI, kind: str = "ratio") -> EstimateWithCI:
    """Delta-method ratio of independent estimates."""
    r = num.value / den.value
    rel = math.hypot(num.stderr / num.value if num.value else 0.0, den.stderr / den.value)
    se = abs(r) * rel if num.value else num.stderr / abs(den.value)
    return EstimateWithCI(r, se, min(num.count, den.count), num.seed, kind)


def batch_means_se(samples, batches: int = 50) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    x = np.asarray(samples, dtype=float)
    b = min(batches, x.size)
    if b < 2:
        return math.inf
    means = np.array([c.mean() for c in np.array_split(x, b)])
    return float(means.std(ddof=1) / math.sqrt(b))


@dataclass
class CheckResult:
    """One named identity check with a verdict."""

    name: str
    passed: bool | None
    estimate: float | None = None
    target: float | None = None
    stderr: float | None = None
    detail: dict = field(default_factory=dict)

    @property
    def skipped(self) -> bool:
        return self.passed is None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "estimate": self.estimate,
                "target": self.target, "stderr": self.stderr, "detail": self.detail}


def ks_normal(x, scale: float) -> float:
    """KS p-value of ``x`` against Normal(0, scale**2)."""
    return float(_st.kstest(np.asarray(x, float), "norm", args=(0.0, scale)).pvalue)
