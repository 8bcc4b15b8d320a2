"""Multi-class M/M/c queue: rate estimation and discrete-event simulation.

All classes share one first-in-first-out queue feeding ``c`` identical
servers with unbounded waiting room. Times are in days, rates per day.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _seeding
from .errors import EstimationError, ParameterError

FIFO = "FIFO"


@dataclass(frozen=True)
class ClusterModel:
    """Per-cluster arrival rate, system-time rate and population share."""

    lambdas: tuple[float, ...]
    phis: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        lambdas = tuple(float(x) for x in self.lambdas)
        phis = tuple(float(x) for x in self.phis)
        weights = tuple(float(x) for x in self.weights)
        if not (len(lambdas) == len(phis) == len(weights)) or not lambdas:
            raise ParameterError("lambdas, phis and weights must be non-empty and equally long")
        # zero arrival rates are legal: a full transfer empties a cluster
        if any(not math.isfinite(x) or x < 0 for x in lambdas):
            raise ParameterError(f"arrival rates must be finite and >= 0, got {lambdas}")
        if any(not math.isfinite(x) or x <= 0 for x in phis):
            raise ParameterError(f"system-time rates must be finite and > 0, got {phis}")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ParameterError(f"weights must be >= 0 and sum to 1, got {weights}")
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "weights", weights)

    @property
    def n_clusters(self) -> int:
        return len(self.lambdas)

    @property
    def mean_los(self) -> tuple[float, ...]:
        return tuple(1.0 / phi for phi in self.phis)

    @classmethod
    def from_means(cls, weights, mean_interarrival, mean_los) -> "ClusterModel":
        return cls(
            lambdas=tuple(1.0 / m for m in mean_interarrival),
            phis=tuple(1.0 / m for m in mean_los),
            weights=tuple(weights),
        )

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "phis": list(self.phis), "weights": list(self.weights)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        return cls(lambdas=tuple(d["lambdas"]), phis=tuple(d["phis"]), weights=tuple(d["weights"]))


@dataclass(frozen=True)
class QueueSpec:
    c: int
    arrival_rates: tuple[float, ...]
    service_rates: tuple[float, ...]
    discipline: str = field(default=FIFO, init=False)
    capacity: float = field(default=math.inf, init=False)

    def __post_init__(self):
        if int(self.c) != self.c or self.c < 1:
            raise ParameterError(f"server count must be a positive integer, got {self.c}")
        arr = tuple(float(x) for x in self.arrival_rates)
        svc = tuple(float(x) for x in self.service_rates)
        if len(arr) != len(svc):
            raise ParameterError("arrival_rates and service_rates differ in length")
        if any(not math.isfinite(x) or x < 0 for x in arr):
            raise ParameterError(f"arrival rates must be finite and >= 0, got {arr}")
        if any(not math.isfinite(x) or x <= 0 for x in svc):
            raise ParameterError(f"service rates must be finite and > 0, got {svc}")
        object.__setattr__(self, "c", int(self.c))
        object.__setattr__(self, "arrival_rates", arr)
        object.__setattr__(self, "service_rates", svc)

    @property
    def n_classes(self) -> int:
        return len(self.arrival_rates)

    @property
    def offered_load(self) -> float:
        """Expected number of busy servers, sum of lambda_i / mu_i."""
        return sum(lam / mu for lam, mu in zip(self.arrival_rates, self.service_rates))

    @property
    def traffic_intensity(self) -> float:
        return self.offered_load / self.c

    @property
    def saturated(self) -> bool:
        return self.offered_load >= self.c

    def with_servers(self, c: int) -> "QueueSpec":
        return QueueSpec(c, self.arrival_rates, self.service_rates)


@dataclass(frozen=True)
class CustomerRecord:
    class_id: int
    arrival: float
    service_start: float
    exit: float
    server_id: int

    @property
    def waiting_time(self) -> float:
        return self.service_start - self.arrival

    @property
    def service_time(self) -> float:
        return self.exit - self.service_start

    @property
    def system_time(self) -> float:
        return self.exit - self.arrival


@dataclass
class SimulationRun:
    """Outcome of one simulation, truncated to the observation window.

    Customer data is held column-wise; :attr:`records` materialises
    :class:`CustomerRecord` objects on demand.
    """

    spec: QueueSpec
    horizon: float
    warmup: float
    cooldown: float
    seed: int
    class_id: np.ndarray
    arrival: np.ndarray
    service_start: np.ndarray
    exit: np.ndarray
    server_id: np.ndarray
    server_busy_time: np.ndarray
    n_arrivals: int = 0

    @property
    def window(self) -> float:
        return self.horizon - self.warmup - self.cooldown

    @property
    def saturated(self) -> bool:
        return self.spec.saturated

    @property
    def system_time(self) -> np.ndarray:
        return self.exit - self.arrival

    @property
    def waiting_time(self) -> np.ndarray:
        return self.service_start - self.arrival

    @property
    def service_time(self) -> np.ndarray:
        return self.exit - self.service_start

    def __len__(self) -> int:
        return int(self.arrival.size)

    @property
    def records(self) -> list[CustomerRecord]:
        return [
            CustomerRecord(int(k), float(a), float(s), float(e), int(sid))
            for k, a, s, e, sid in zip(self.class_id, self.arrival, self.service_start, self.exit, self.server_id)
        ]

    def system_times_by_class(self) -> list[np.ndarray]:
        st = self.system_time
        return [st[self.class_id == k] for k in range(self.spec.n_classes)]

    def summary(self) -> dict:
        return {
            "c": self.spec.c,
            "arrival_rates": list(self.spec.arrival_rates),
            "service_rates": list(self.spec.service_rates),
            "discipline": self.spec.discipline,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "cooldown": self.cooldown,
            "seed": self.seed,
            "n_arrivals": self.n_arrivals,
            "n_retained": len(self),
            "saturated": self.saturated,
            "offered_load": self.spec.offered_load,
            "server_busy_time": self.server_busy_time.tolist(),
        }


def estimate_rates(spells: Iterable) -> ClusterModel:
    """Estimate per-cluster arrival and system-time rates from labelled spells.

    ``lambda_i`` is the reciprocal of the mean gap between successive
    admissions of cluster ``i``; ``phi_i`` the reciprocal of its mean LOS.
    Cluster labels must be ``0..k-1``.
    """
    admissions = defaultdict(list)
    los = defaultdict(list)
    for s in spells:
        if s.cluster_label is None:
            raise EstimationError(f"spell {s.spell_id} has no cluster label")
        admissions[int(s.cluster_label)].append(float(s.admission_time))
        los[int(s.cluster_label)].append(float(s.los))
    if not admissions:
        raise EstimationError("no spells to estimate from")
    k = max(admissions) + 1
    total = sum(len(v) for v in admissions.values())
    lambdas, phis, weights = [], [], []
    for i in range(k):
        times = np.sort(np.asarray(admissions.get(i, []), dtype=float))
        if times.size < 2:
            raise EstimationError(f"cluster {i} has fewer than 2 spells")
        mean_gap = float(np.mean(np.diff(times)))
        if mean_gap <= 0:
            raise EstimationError(f"cluster {i} has no distinct admission times")
        mean_los = float(np.mean(los[i]))
        if mean_los <= 0:
            raise EstimationError(f"cluster {i} has non-positive mean LOS {mean_los}")
        lambdas.append(1.0 / mean_gap)
        phis.append(1.0 / mean_los)
        weights.append(times.size / total)
    return ClusterModel(tuple(lambdas), tuple(phis), tuple(weights))


def build_spec(model: ClusterModel, p: Sequence[float], c: int) -> QueueSpec:
    """Queue with arrival rate ``lambda_i`` and service rate ``p_i * phi_i`` per class."""
    p = tuple(float(x) for x in p)
    if len(p) != model.n_clusters:
        raise ParameterError(f"expected {model.n_clusters} scaling values, got {len(p)}")
    bad = [x for x in p if not (0.0 < x <= 1.0)]
    if bad:
        raise ParameterError(f"scaling values must lie in (0, 1], got {bad}")
    if int(c) != c or c < 1:
        raise ParameterError(f"server count must be a positive integer, got {c}")
    return QueueSpec(int(c), model.lambdas, tuple(pi * phi for pi, phi in zip(p, model.phis)))


def _poisson_arrivals(gen: np.random.Generator, rate: float, until: float) -> np.ndarray:
    if rate <= 0 or until <= 0:
        return np.empty(0)
    expected = rate * until
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    times = np.cumsum(gen.standard_exponential(chunk)) / rate
    while times[-1] < until:
        more = np.cumsum(gen.standard_exponential(chunk)) / rate + times[-1]
        times = np.concatenate([times, more])
    return times[: np.searchsorted(times, until, side="left")]


def simulate(spec: QueueSpec, horizon: float, warmup: float, cooldown: float, seed: int) -> SimulationRun:
    """Run the queue for ``horizon`` days and keep customers inside the window.

    A customer is retained when it arrives at or after ``warmup`` and exits
    no later than ``horizon - cooldown``. Busy time is clipped to the same
    window. Each class draws arrivals and services from its own substream of
    ``seed``.
    """
    if not (warmup >= 0 and cooldown >= 0 and horizon > warmup + cooldown):
        raise ParameterError(
            f"need horizon > warmup + cooldown >= 0, got horizon={horizon}, warmup={warmup}, cooldown={cooldown}"
        )
    end = horizon - cooldown
    # under FIFO, customers arriving after the window closes never start inside it
    arrivals, services, classes = [], [], []
    for k, (lam, mu) in enumerate(zip(spec.arrival_rates, spec.service_rates)):
        t = _poisson_arrivals(_seeding.rng(seed, "arrival", k), lam, end)
        arrivals.append(t)
        services.append(_seeding.rng(seed, "service", k).standard_exponential(t.size) / mu)
        classes.append(np.full(t.size, k, dtype=np.int64))
    arrival = np.concatenate(arrivals) if arrivals else np.empty(0)
    service = np.concatenate(services) if services else np.empty(0)
    class_id = np.concatenate(classes) if classes else np.empty(0, dtype=np.int64)
    order = np.argsort(arrival, kind="stable")
    arrival, service, class_id = arrival[order], service[order], class_id[order]

    n = arrival.size
    start = np.empty(n)
    server = np.empty(n, dtype=np.int64)
    free = [(0.0, s) for s in range(spec.c)]
    replace = heapq.heapreplace
    for idx, (a, d) in enumerate(zip(arrival.tolist(), service.tolist())):
        t_free, sid = free[0]
        s = a if a > t_free else t_free
        start[idx] = s
        server[idx] = sid
        replace(free, (s + d, sid))
    exit_ = start + service

    busy = np.zeros(spec.c)
    if n:
        overlap = np.clip(np.minimum(exit_, end) - np.maximum(start, warmup), 0.0, None)
        np.add.at(busy, server, overlap)

    keep = (arrival >= warmup) & (exit_ <= end)
    return SimulationRun(
        spec=spec,
        horizon=float(horizon),
        warmup=float(warmup),
        cooldown=float(cooldown),
        seed=int(seed),
        class_id=class_id[keep],
        arrival=arrival[keep],
        service_start=start[keep],
        exit=exit_[keep],
        server_id=server[keep],
        server_busy_time=busy,
        n_arrivals=int(n),
    )


@dataclass(frozen=True)
class Utilisation:
    per_server: np.ndarray
    aggregate: float


def utilization(run: SimulationRun) -> Utilisation:
    """Busy fraction of each server over the observation window, and their mean."""
    window = run.window
    if window <= 0:
        raise ParameterError("observation window must be positive")
    per_server = np.clip(run.server_busy_time / window, 0.0, 1.0)
    return Utilisation(per_server=per_server, aggregate=float(per_server.mean()))
