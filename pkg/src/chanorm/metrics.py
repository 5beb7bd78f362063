"""Evaluation statistics: convergence, dispersion, distribution shape and tests."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special, stats


class SlidingWindow:
    """The ``size`` most recent values of a series."""

    def __init__(self, size: int = 1000, values: Iterable[float] = ()):
        if size < 1:
            raise ValueError(f"window size must be positive, got {size}")
        self.size = size
        self.values = deque(values, maxlen=size)

    def push(self, x: float) -> None:
        self.values.append(float(x))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @property
    def full(self) -> bool:
        return len(self.values) == self.size


def _as_array(x, name="sample") -> np.ndarray:
    a = np.asarray(list(x) if not isinstance(x, np.ndarray) else x, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return a


def rmsd(window) -> float:
    """Sample standard deviation (n - 1 denominator) of the window."""
    a = _as_array(window, "window")
    if a.size < 2:
        raise ValueError("rmsd needs at least two values")
    return float(np.sqrt(np.sum((a - a.mean()) ** 2) / (a.size - 1)))


def converged(series, epsilon: float = 1e-3, window: int = 1000) -> bool:
    """True iff every series moved by less than ``epsilon`` over its last ``window`` samples.

    ``series`` is a single sequence or a mapping/sequence of sequences.  A
    series shorter than the window has not been observed long enough and
    counts as unconverged.
    """
    if isinstance(series, dict):
        series = list(series.values())
    elif len(series) and np.ndim(series[0]) == 0:
        series = [series]
    for s in series:
        a = _as_array(s)
        if a.size < window:
            return False
        tail = a[-window:]
        if tail.max() - tail.min() >= epsilon:
            return False
    return True


class ConvergenceTracker:
    """Incremental form of :func:`converged` for many keyed series sampled every tick.

    Values are reported only when they change; a key that is not reported
    keeps its previous value.  A key first seen at tick ``t`` counts as a
    change at ``t``.  The tracker is converged at tick ``t`` once no key's
    range over ``(t - window, t]`` reached ``epsilon``.
    """

    def __init__(self, epsilon: float = 1e-3, window: int = 1000):
        self.epsilon = epsilon
        self.window = window
        self._hist: dict = {}
        self.last_violation = 0
        self.started = None

    def observe(self, tick: int, values: dict) -> None:
        if self.started is None:
            self.started = tick
        lo = tick - self.window
        for key, x in values.items():
            h = self._hist.get(key)
            if h is None:
                self._hist[key] = deque([(tick, x)])
                self.last_violation = max(self.last_violation, tick)
                continue
            if h[-1][1] == x:
                continue
            h.append((tick, x))
            # keep the newest sample at or before the window start: it is the window's first value
            while len(h) > 1 and h[1][0] <= lo:
                h.popleft()
            vals = [v for _, v in h]
            if max(vals) - min(vals) >= self.epsilon:
                self.last_violation = tick

    def is_converged(self, tick: int) -> bool:
        if self.started is None or not self._hist:
            return False
        return tick - self.last_violation >= self.window and tick - self.started >= self.window


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic with the asymptotic Kolmogorov p-value."""
    x = np.sort(_as_array(a, "a"))
    y = np.sort(_as_array(b, "b"))
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    grid = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, grid, side="right") / x.size
    cdf_y = np.searchsorted(y, grid, side="right") / y.size
    d = float(np.max(np.abs(cdf_x - cdf_y)))
    en = x.size * y.size / (x.size + y.size)
    p = float(special.kolmogorov(math.sqrt(en) * d)) if d > 0 else 1.0
    return d, min(max(p, 0.0), 1.0)


def percentile(dist, q: float) -> float:
    """Rank percentile: the sorted value at zero-based position floor(q/100 * n), capped at the maximum.

    For q < 100 this is the smallest observed value with more than q% of
    the observations at or below it, so ``q=100`` is the maximum.
    """
    a = np.sort(_as_array(dist, "distribution"))
    if a.size == 0:
        raise ValueError("percentile of an empty distribution")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"q must lie in [0, 100], got {q}")
    k = min(math.floor(q * a.size / 100.0 + 1e-9), a.size - 1)
    return float(a[k])


def _central_moments(dist):
    a = _as_array(dist, "distribution")
    if a.size < 2:
        raise ValueError("need at least two observations")
    dev = a - a.mean()
    m2 = float(np.mean(dev ** 2))
    if m2 <= 0.0 or np.all(a == a[0]):
        raise ValueError("distribution has zero variance")
    return dev, m2


def skewness(dist) -> float:
    dev, m2 = _central_moments(dist)
    return float(np.mean(dev ** 3) / m2 ** 1.5)


def kurtosis(dist) -> float:
    """Non-excess kurtosis m4 / m2^2 (a normal sample tends to 3)."""
    dev, m2 = _central_moments(dist)
    return float(np.mean(dev ** 4) / m2 ** 2)


def welch_t(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-tailed p-value."""
    x, y = _as_array(a, "a"), _as_array(b, "b")
    if x.size < 2 or y.size < 2:
        raise ValueError("both samples need at least two values")
    vx, vy = x.var(ddof=1) / x.size, y.var(ddof=1) / y.size
    se2 = vx + vy
    diff = x.mean() - y.mean()
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        raise ValueError("both samples have zero variance")
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (vx ** 2 / (x.size - 1) + vy ** 2 / (y.size - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return float(t), float(min(p, 1.0))


def glass_delta(treatment, control) -> float:
    """Improvement of ``treatment`` over ``control`` in control standard deviations."""
    t, c = _as_array(treatment, "treatment"), _as_array(control, "control")
    if c.size < 2:
        raise ValueError("control needs at least two values")
    sd = c.std(ddof=1)
    if sd == 0.0:
        raise ValueError("control has zero standard deviation")
    return float((c.mean() - t.mean()) / sd)


def glass_delta_from_summary(mean_treatment: float, mean_control: float, sd_control: float) -> float:
    if sd_control <= 0:
        raise ValueError("control standard deviation must be positive")
    return (mean_control - mean_treatment) / sd_control


def collision_series(collisions_per_tick: Sequence[int], window_ticks: int = 1000) -> list[int]:
    """Totals per consecutive block of ``window_ticks`` ticks (the last block may be partial)."""
    if window_ticks < 1:
        raise ValueError("window must be positive")
    a = np.asarray(collisions_per_tick, dtype=np.int64)
    if a.size == 0:
        return []
    pad = (-a.size) % window_ticks
    a = np.concatenate([a, np.zeros(pad, dtype=np.int64)])
    return [int(x) for x in a.reshape(-1, window_ticks).sum(axis=1)]


@dataclass
class DelayDistribution:
    delays: list = field(default_factory=list)

    def __post_init__(self):
        if any(d < 0 for d in self.delays):
            raise ValueError("delays must be nonnegative")

    def histogram(self, minimum: int = 0) -> dict:
        out = {}
        for d in self.delays:
            if d >= minimum:
                out[d] = out.get(d, 0) + 1
        return dict(sorted(out.items()))
