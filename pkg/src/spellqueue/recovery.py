"""Grid search for the server count and service scaling that best reproduce observed LOS.

Every grid point ``(c, p)`` is simulated ``repetitions`` times. For each
cluster the simulated system times are pooled across repetitions and compared
with the observed LOS distribution by first Wasserstein distance; the point
with the smallest worst-cluster distance wins.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _seeding
from .data import SCHEMA_HEADER
from .des import ClusterModel, build_spec, simulate
from .errors import ConfigError, ContractError, EvaluationError, ParameterError
from .metrics import EmpiricalDistribution, wasserstein

YEAR = 365.0


def _grid(start: float, stop: float, step: float) -> tuple[float, ...]:
    n = int(round((stop - start) / step))
    return tuple(round(start + i * step, 10) for i in range(n + 1))


@dataclass(frozen=True)
class SweepGrid:
    """Grid and simulation settings for the parameter sweep.

    ``p_values`` is either one sequence shared by every cluster or one
    sequence per cluster.
    """

    p_values: tuple = _grid(0.5, 1.0, 0.05)
    c_values: tuple[int, ...] = (40, 45, 50, 55, 60)
    repetitions: int = 50
    horizon: float = 4 * YEAR
    warmup: float = YEAR
    cooldown: float = YEAR
    compare: str = "overall"

    def __post_init__(self):
        pv = self.p_values
        if len(pv) and all(isinstance(x, (list, tuple)) for x in pv):
            pv = tuple(tuple(float(x) for x in axis) for axis in pv)
            flat = [x for axis in pv for x in axis]
        else:
            pv = tuple(float(x) for x in pv)
            flat = list(pv)
        object.__setattr__(self, "p_values", pv)
        object.__setattr__(self, "c_values", tuple(self.c_values))
        if not flat or any(not (0.0 < x <= 1.0) for x in flat):
            raise ParameterError(f"p values must lie in (0, 1], got {flat}")
        if not self.c_values or any(int(c) != c or c < 1 for c in self.c_values):
            raise ParameterError(f"server counts must be positive integers, got {self.c_values}")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ParameterError("repetitions must be a positive integer")
        if not (self.warmup >= 0 and self.cooldown >= 0 and self.horizon > self.warmup + self.cooldown):
            raise ParameterError("need horizon > warmup + cooldown >= 0")
        if self.compare not in ("overall", "per_cluster"):
            raise ParameterError(f"compare must be 'overall' or 'per_cluster', got {self.compare!r}")

    def p_axes(self, n_clusters: int) -> tuple[tuple[float, ...], ...]:
        if self.p_values and isinstance(self.p_values[0], tuple):
            if len(self.p_values) != n_clusters:
                raise ParameterError(f"grid has {len(self.p_values)} p axes for {n_clusters} clusters")
            return self.p_values
        return (self.p_values,) * n_clusters

    def points(self, n_clusters: int):
        for c in self.c_values:
            for p in itertools.product(*self.p_axes(n_clusters)):
                yield int(c), p

    def size(self, n_clusters: int) -> int:
        return len(self.c_values) * math.prod(len(a) for a in self.p_axes(n_clusters))

    @classmethod
    def from_dict(cls, d: Mapping) -> "SweepGrid":
        kwargs = dict(d)
        for key in ("p_values", "c_values"):
            v = kwargs.get(key)
            if isinstance(v, Mapping):
                try:
                    values = _grid(float(v["start"]), float(v["stop"]), float(v["step"]))
                except KeyError as exc:
                    raise ConfigError(f"{key} range needs start, stop and step (missing {exc})") from None
                kwargs[key] = tuple(int(round(x)) for x in values) if key == "c_values" else values
        for key in ("horizon", "warmup", "cooldown"):
            years = kwargs.pop(f"{key}_years", None)
            if years is not None:
                kwargs[key] = float(years) * YEAR
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "p_values": [list(a) for a in self.p_values] if self.p_values and isinstance(self.p_values[0], tuple) else list(self.p_values),
            "c_values": list(self.c_values),
            "repetitions": self.repetitions,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "cooldown": self.cooldown,
            "compare": self.compare,
        }


# Small grid for desk-scale runs: p step 0.25, three server counts, two-year horizons.
DESK_GRID = SweepGrid(
    p_values=(0.5, 0.75, 1.0),
    c_values=(40, 45, 50),
    repetitions=10,
    horizon=2 * YEAR,
    warmup=0.5 * YEAR,
    cooldown=0.5 * YEAR,
)


@dataclass
class SweepResult:
    c: int
    p: tuple[float, ...]
    per_cluster_distance: tuple[float, ...]
    max_distance: float
    repetition_distances: np.ndarray = field(repr=False)
    n_retained: tuple[int, ...] = ()
    saturated: bool = False

    @property
    def repetition_max(self) -> np.ndarray:
        """Worst-cluster distance within each repetition (NaN where a cluster had no customers)."""
        d = self.repetition_distances
        out = np.full(d.shape[0], np.nan)
        ok = ~np.isnan(d).any(axis=1)
        out[ok] = d[ok].max(axis=1)
        return out

    @property
    def standard_error(self) -> float:
        """Replication standard error of the worst-cluster distance."""
        m = self.repetition_max
        m = m[~np.isnan(m)]
        if m.size < 2:
            return math.nan
        return float(m.std(ddof=1) / math.sqrt(m.size))

    def sort_key(self):
        return (self.max_distance, self.c, self.p)

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "p": list(self.p),
            "per_cluster_distance": list(self.per_cluster_distance),
            "max_distance": self.max_distance,
            "standard_error": self.standard_error,
            "n_retained": list(self.n_retained),
            "saturated": self.saturated,
        }


def _observed_for(observed, i: int) -> EmpiricalDistribution:
    if isinstance(observed, Mapping):
        return observed[i]
    if isinstance(observed, (list, tuple)) and observed and isinstance(observed[0], EmpiricalDistribution):
        return observed[i]
    return observed if isinstance(observed, EmpiricalDistribution) else EmpiricalDistribution(observed)


def evaluate_point(
    model: ClusterModel,
    c: int,
    p: Sequence[float],
    grid: SweepGrid,
    observed,
    seed: int,
) -> SweepResult:
    """Simulate one grid point and score it against the observed LOS.

    ``observed`` is a single distribution (compared with every cluster) or,
    for the per-cluster variant, a sequence or mapping of one distribution
    per cluster. Repetition ``r`` uses the seed derived from ``(seed, r)``.
    """
    p = tuple(float(x) for x in p)
    spec = build_spec(model, p, c)
    k = model.n_clusters
    if not isinstance(observed, (Mapping, EmpiricalDistribution)) and not (
        isinstance(observed, (list, tuple)) and observed and isinstance(observed[0], EmpiricalDistribution)
    ):
        observed = EmpiricalDistribution(observed)
    targets = [_observed_for(observed, i) for i in range(k)]

    pooled: list[list[np.ndarray]] = [[] for _ in range(k)]
    rep_dist = np.full((grid.repetitions, k), np.nan)
    for r in range(grid.repetitions):
        run = simulate(spec, grid.horizon, grid.warmup, grid.cooldown, _seeding.derive_seed(seed, r))
        for i, times in enumerate(run.system_times_by_class()):
            if times.size:
                pooled[i].append(times)
                rep_dist[r, i] = wasserstein(times, targets[i])

    distances, counts = [], []
    for i in range(k):
        if not pooled[i]:
            raise EvaluationError(f"cluster {i} has no retained customers at c={c}, p={p}")
        samples = np.concatenate(pooled[i])
        counts.append(int(samples.size))
        distances.append(wasserstein(samples, targets[i]))
    return SweepResult(
        c=int(c),
        p=p,
        per_cluster_distance=tuple(distances),
        max_distance=max(distances),
        repetition_distances=rep_dist,
        n_retained=tuple(counts),
        saturated=spec.saturated,
    )


def select_best(results: Sequence[SweepResult]) -> SweepResult:
    """Smallest worst-cluster distance; ties go to fewer servers, then the smaller p."""
    results = list(results)
    if not results:
        raise ContractError("no sweep results to select from")
    return min(results, key=SweepResult.sort_key)


def point_seed(master_seed: int, c: int, p: Sequence[float]) -> int:
    return _seeding.derive_seed(master_seed, "sweep", c, *p)


def _evaluate_task(args):
    model, c, p, grid, observed, master_seed = args
    try:
        return evaluate_point(model, c, p, grid, observed, point_seed(master_seed, c, p))
    except EvaluationError as exc:
        raise EvaluationError(f"grid point c={c}, p={tuple(p)}: {exc}") from None


@dataclass
class SweepOutcome:
    results: list[SweepResult]
    best: SweepResult
    grid: SweepGrid


def run_sweep(
    model: ClusterModel,
    grid: SweepGrid,
    observed,
    master_seed: int,
    workers: int = 1,
) -> SweepOutcome:
    """Evaluate every grid point; each point's seed depends only on its coordinates."""
    if grid.compare == "per_cluster" and isinstance(observed, EmpiricalDistribution):
        raise ConfigError("per-cluster comparison needs one observed distribution per cluster")
    tasks = [(model, c, p, grid, observed, master_seed) for c, p in grid.points(model.n_clusters)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_evaluate_task(t) for t in tasks]
    return SweepOutcome(results=results, best=select_best(results), grid=grid)


def write_results(results: Sequence[SweepResult], path: str | Path) -> None:
    """One row per grid point: c, p_0..p_k, per-cluster distances, max distance."""
    k = len(results[0].p) if results else 0
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["c", *(f"p_{i}" for i in range(k)), *(f"distance_{i}" for i in range(k)), "max_distance", "saturated"]
        )
        for r in results:
            writer.writerow(
                [r.c, *map(repr, r.p), *map(repr, r.per_cluster_distance), repr(r.max_distance), int(r.saturated)]
            )


def write_best(outcome: SweepOutcome, model: ClusterModel, path: str | Path, extra: Mapping | None = None) -> None:
    best = outcome.best
    doc = {
        "schema_version": 1,
        "c": best.c,
        "p": list(best.p),
        "max_distance": best.max_distance,
        "per_cluster_distance": list(best.per_cluster_distance),
        "standard_error": best.standard_error,
        "model": model.to_dict(),
        "grid": outcome.grid.to_dict(),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
