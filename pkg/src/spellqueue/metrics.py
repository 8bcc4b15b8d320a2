"""Distribution distances and summary statistics for length-of-stay samples."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted sample of real values (days)."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if arr.size == 0:
            raise ContractError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ContractError("empirical distribution samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return int(self.samples.size)

    def shifted(self, offset: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.samples + offset)


def _as_distribution(x) -> EmpiricalDistribution:
    if isinstance(x, EmpiricalDistribution):
        return x
    return EmpiricalDistribution(np.asarray(x, dtype=float))


def wasserstein(u, v) -> float:
    """First Wasserstein distance between two empirical distributions.

    Evaluates the integral of ``|F - G|`` exactly as a finite sum over the
    merged breakpoints of the two right-continuous step CDFs. Accepts
    :class:`EmpiricalDistribution` instances or plain sequences.
    """
    u = _as_distribution(u)
    v = _as_distribution(v)
    a, b = u.samples, v.samples
    merged = np.concatenate([a, b])
    merged.sort(kind="mergesort")
    widths = np.diff(merged)
    # CDF values on each interval [merged[k], merged[k+1])
    f = np.searchsorted(a, merged[:-1], side="right") / a.size
    g = np.searchsorted(b, merged[:-1], side="right") / b.size
    return float(np.sum(np.abs(f - g) * widths))


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    min: float
    q25: float
    median: float
    q75: float
    max: float

    def as_dict(self) -> dict:
        return asdict(self)


def summary_stats(samples) -> SummaryStats:
    """Mean, population std and linearly interpolated quartiles."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ContractError("summary statistics need at least one sample")
    q25, med, q75 = np.percentile(x, [25.0, 50.0, 75.0])
    return SummaryStats(
        mean=float(x.mean()),
        std=float(x.std()),
        min=float(x.min()),
        q25=float(q25),
        median=float(med),
        q75=float(q75),
        max=float(x.max()),
    )
