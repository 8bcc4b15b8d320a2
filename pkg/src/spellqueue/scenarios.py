"""What-if analysis on a calibrated queue: arrival scaling, server scaling and inter-cluster transfer.

Metrics are reported relative to a base case: every simulated system time is
divided by the base median system time and every per-server utilisation by
the base median utilisation, so a value of 1 means "as normal".
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _seeding
from .data import SCHEMA_HEADER
from .des import ClusterModel, QueueSpec, build_spec, simulate, utilization
from .errors import ConfigError, NormalisationError, ParameterError
from .recovery import YEAR, _grid

ARRIVAL_SCALE = "ArrivalScale"
SERVER_SCALE = "ServerScale"
TRANSFER = "Transfer"
KINDS = (ARRIVAL_SCALE, SERVER_SCALE, TRANSFER)

DEFAULT_VALUES = {
    ARRIVAL_SCALE: _grid(0.5, 2.0, 0.01),
    SERVER_SCALE: _grid(0.5, 2.0, 0.025),
    TRANSFER: _grid(0.0, 1.0, 0.02),
}
IDENTITY = {ARRIVAL_SCALE: 1.0, SERVER_SCALE: 1.0, TRANSFER: 0.0}


def scale_arrivals(model: ClusterModel, sigma: float) -> ClusterModel:
    if not sigma > 0:
        raise ParameterError(f"arrival scaling factor must be positive, got {sigma}")
    return replace(model, lambdas=tuple(sigma * lam for lam in model.lambdas))


def scale_servers(spec: QueueSpec, ratio: float) -> QueueSpec:
    """Multiply the server count by ``ratio``, rounding half up."""
    if not ratio > 0:
        raise ParameterError(f"server ratio must be positive, got {ratio}")
    # the small guard keeps grid values like 0.525 * 40 from rounding down
    c = math.floor(ratio * spec.c + 0.5 + 1e-9)
    if c < 1:
        raise ParameterError(f"ratio {ratio} leaves no servers (c={spec.c})")
    return spec.with_servers(c)


def transfer_arrivals(model: ClusterModel, i: int, j: int, delta: float) -> ClusterModel:
    """Move a proportion ``delta`` of cluster ``i``'s arrivals to cluster ``j``."""
    k = model.n_clusters
    if i == j:
        raise ParameterError(f"transfer source and target must differ (both {i})")
    if not (0 <= i < k and 0 <= j < k):
        raise ParameterError(f"cluster indices must lie in [0, {k}), got {i}, {j}")
    if not (0.0 <= delta <= 1.0):
        raise ParameterError(f"transfer proportion must lie in [0, 1], got {delta}")
    lambdas = list(model.lambdas)
    moved = delta * lambdas[i]
    lambdas[i] = lambdas[i] - moved
    lambdas[j] = lambdas[j] + moved
    return replace(model, lambdas=tuple(lambdas))


@dataclass(frozen=True)
class BaseCase:
    model: ClusterModel
    p: tuple[float, ...]
    c: int

    @property
    def spec(self) -> QueueSpec:
        return build_spec(self.model, self.p, self.c)


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    values: tuple[float, ...] = ()
    source: int | None = None
    target: int | None = None
    repetitions: int = 50
    horizon: float = 4 * YEAR
    warmup: float = YEAR
    cooldown: float = YEAR
    master_seed: int = 0
    iqr_mode: str = "pooled"
    reuse_base_seeds: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        values = tuple(float(v) for v in (self.values or DEFAULT_VALUES[self.kind]))
        object.__setattr__(self, "values", values)
        if self.kind == TRANSFER:
            if self.source is None or self.target is None:
                raise ParameterError("a transfer scenario needs source and target clusters")
            if self.source == self.target:
                raise ParameterError(f"transfer source and target must differ (both {self.source})")
            if any(not (0.0 <= v <= 1.0) for v in values):
                raise ParameterError("transfer proportions must lie in [0, 1]")
        elif any(not v > 0 for v in values):
            raise ParameterError(f"{self.kind} values must be positive")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ParameterError("repetitions must be a positive integer")
        if not (self.warmup >= 0 and self.cooldown >= 0 and self.horizon > self.warmup + self.cooldown):
            raise ParameterError("need horizon > warmup + cooldown >= 0")
        if self.iqr_mode not in ("pooled", "per_repetition"):
            raise ParameterError("iqr_mode must be 'pooled' or 'per_repetition'")

    @classmethod
    def from_dict(cls, d: Mapping, master_seed: int | None = None) -> "ScenarioSpec":
        kwargs = dict(d)
        v = kwargs.get("values")
        if isinstance(v, Mapping):
            try:
                kwargs["values"] = _grid(float(v["start"]), float(v["stop"]), float(v["step"]))
            except KeyError as exc:
                raise ConfigError(f"values range needs start, stop and step (missing {exc})") from None
        for key in ("horizon", "warmup", "cooldown"):
            years = kwargs.pop(f"{key}_years", None)
            if years is not None:
                kwargs[key] = float(years) * YEAR
        if master_seed is not None:
            kwargs["master_seed"] = master_seed
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if "kind" not in kwargs:
            raise ConfigError("scenario config needs a 'kind'")
        return cls(**kwargs)

    def transform(self, base: BaseCase, value: float) -> QueueSpec:
        if self.kind == ARRIVAL_SCALE:
            return build_spec(scale_arrivals(base.model, value), base.p, base.c)
        if self.kind == SERVER_SCALE:
            return scale_servers(base.spec, value)
        return build_spec(transfer_arrivals(base.model, self.source, self.target, value), base.p, base.c)


@dataclass(frozen=True)
class Quartiles:
    median: float
    q25: float
    q75: float

    @classmethod
    def of(cls, x: np.ndarray) -> "Quartiles":
        if x.size == 0:
            return cls(math.nan, math.nan, math.nan)
        q25, med, q75 = np.percentile(x, [25.0, 50.0, 75.0])
        return cls(float(med), float(q25), float(q75))

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


@dataclass
class ScenarioPoint:
    value: float
    relative_system_time: Quartiles
    relative_utilisation: Quartiles
    saturated: bool
    c: int = 0
    n_customers: int = 0


@dataclass
class ScenarioTable:
    spec: ScenarioSpec
    base_median_system_time: float
    base_median_utilisation: float
    points: list[ScenarioPoint] = field(default_factory=list)

    def point(self, value: float) -> ScenarioPoint:
        for pt in self.points:
            if abs(pt.value - value) < 1e-9:
                return pt
        raise KeyError(value)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(SCHEMA_HEADER + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                [
                    "value",
                    "c",
                    "system_time_median",
                    "system_time_q25",
                    "system_time_q75",
                    "utilisation_median",
                    "utilisation_q25",
                    "utilisation_q75",
                    "saturated",
                    "n_customers",
                ]
            )
            for pt in self.points:
                st, ut = pt.relative_system_time, pt.relative_utilisation
                writer.writerow(
                    [
                        repr(pt.value),
                        pt.c,
                        *(repr(x) for x in (st.median, st.q25, st.q75, ut.median, ut.q25, ut.q75)),
                        int(pt.saturated),
                        pt.n_customers,
                    ]
                )


def _simulate_block(spec: QueueSpec, scenario: ScenarioSpec, block: str):
    """System times and per-server utilisations of every repetition in a seed block."""
    times, utils = [], []
    for r in range(scenario.repetitions):
        run = simulate(
            spec,
            scenario.horizon,
            scenario.warmup,
            scenario.cooldown,
            _seeding.derive_seed(scenario.master_seed, block, r),
        )
        times.append(run.system_time)
        utils.append(utilization(run).per_server)
    return times, utils


def _summarise(chunks: list[np.ndarray], scale: float, mode: str) -> Quartiles:
    if mode == "per_repetition":
        meds = np.array([np.median(x) for x in chunks if x.size])
        return Quartiles.of(meds / scale)
    return Quartiles.of(np.concatenate(chunks) / scale)


def _point_task(args) -> ScenarioPoint:
    base, scenario, value, base_st, base_util = args
    spec = scenario.transform(base, value)
    block = "base" if scenario.reuse_base_seeds else "scenario"
    times, utils = _simulate_block(spec, scenario, block)
    return ScenarioPoint(
        value=value,
        relative_system_time=_summarise(times, base_st, scenario.iqr_mode),
        relative_utilisation=_summarise(utils, base_util, scenario.iqr_mode),
        saturated=spec.saturated,
        c=spec.c,
        n_customers=int(sum(t.size for t in times)),
    )


def run_scenario(base: BaseCase, scenario: ScenarioSpec, workers: int = 1) -> ScenarioTable:
    """Simulate the base case, then every scenario value, and report relative quartiles.

    The base case uses its own seed block. Scenario values share one common
    block of repetition seeds, so neighbouring values differ only through the
    transform; with ``reuse_base_seeds`` they reuse the base block instead and
    the identity value reproduces the base case exactly.
    """
    times, utils = _simulate_block(base.spec, scenario, "base")
    all_times = np.concatenate(times)
    base_st = float(np.median(all_times)) if all_times.size else 0.0
    base_util = float(np.median(np.concatenate(utils)))
    if not base_st > 0:
        raise NormalisationError("base case median system time is zero")
    if not base_util > 0:
        raise NormalisationError("base case median utilisation is zero")

    tasks = [(base, scenario, v, base_st, base_util) for v in scenario.values]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_point_task, tasks))
    else:
        points = [_point_task(t) for t in tasks]
    return ScenarioTable(scenario, base_st, base_util, points)
