"""k-prototypes clustering of spells and knee-point selection of k."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _seeding
from .data import INTERVENTIONS, SCHEMA_HEADER, SpellRecord
from .errors import ContractError, ParameterError

DEFAULT_NUMERIC = (
    "n_episodes",
    "n_consultants",
    "n_wards",
    "cci",
    "wimd_rank",
    "los",
    "copd_admissions_last_year",
    "icd_category_counts",
)
DEFAULT_CATEGORICAL = ("intervention", "ltc_flags")


@dataclass(frozen=True)
class FeatureConfig:
    """Which spell attributes feed the clustering.

    ``icd_category_counts`` expands to one numeric column per category and
    ``ltc_flags`` to one categorical column per condition.
    """

    numeric: tuple[str, ...] = DEFAULT_NUMERIC
    categorical: tuple[str, ...] = DEFAULT_CATEGORICAL


@dataclass
class FeatureMatrix:
    numeric_raw: np.ndarray
    numeric: np.ndarray
    numeric_names: list[str]
    categorical: np.ndarray
    categorical_names: list[str]
    row_index: list[str]
    constant_columns: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.row_index)

    @classmethod
    def from_arrays(cls, numeric, categorical, numeric_names=None, categorical_names=None, row_index=None):
        """Standardise numeric columns (z-score) and keep the raw copy alongside."""
        numeric = np.asarray(numeric, dtype=float)
        categorical = np.asarray(categorical, dtype=str)
        n = numeric.shape[0] if numeric.ndim == 2 else categorical.shape[0]
        if numeric.ndim != 2:
            numeric = np.zeros((n, 0))
        if categorical.ndim != 2:
            categorical = np.zeros((n, 0), dtype=str)
        if numeric.shape[0] != categorical.shape[0]:
            raise ContractError("numeric and categorical parts have different row counts")
        if n == 0:
            raise ContractError("feature matrix needs at least one row")
        numeric_names = list(numeric_names or [f"x{j}" for j in range(numeric.shape[1])])
        categorical_names = list(categorical_names or [f"c{j}" for j in range(categorical.shape[1])])
        mean = numeric.mean(axis=0)
        std = numeric.std(axis=0)
        const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        scaled = np.where(const, 0.0, (numeric - mean) / np.where(const, 1.0, std))
        return cls(
            numeric_raw=numeric,
            numeric=scaled,
            numeric_names=numeric_names,
            categorical=categorical,
            categorical_names=categorical_names,
            row_index=list(row_index) if row_index is not None else [str(i) for i in range(n)],
            constant_columns=[name for name, flag in zip(numeric_names, const) if flag],
        )


def build_features(spells: Sequence[SpellRecord], config: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    spells = list(spells)
    icd_names = sorted({k for s in spells for k in s.icd_category_counts})
    ltc_names = sorted({k for s in spells for k in s.ltc_flags})

    num_cols, num_names = [], []
    for name in config.numeric:
        if name == "icd_category_counts":
            for cat in icd_names:
                num_cols.append([s.icd_category_counts.get(cat, 0) for s in spells])
                num_names.append(f"icd:{cat}")
        else:
            num_cols.append([getattr(s, name) for s in spells])
            num_names.append(name)
    cat_cols, cat_names = [], []
    for name in config.categorical:
        if name == "ltc_flags":
            for cond in ltc_names:
                cat_cols.append(["1" if s.ltc_flags.get(cond, False) else "0" for s in spells])
                cat_names.append(f"ltc:{cond}")
        else:
            cat_cols.append([str(getattr(s, name)) for s in spells])
            cat_names.append(name)
    n = len(spells)
    numeric = np.array(num_cols, dtype=float).T if num_cols else np.zeros((n, 0))
    categorical = np.array(cat_cols, dtype=str).T if cat_cols else np.zeros((n, 0), dtype=str)
    return FeatureMatrix.from_arrays(numeric, categorical, num_names, cat_names, [s.spell_id for s in spells])


@dataclass(frozen=True)
class Prototype:
    numeric: np.ndarray
    categorical: np.ndarray


def dissimilarity(row, prototype, gamma: float) -> float:
    """Squared Euclidean distance on numeric parts plus ``gamma`` times categorical mismatches.

    ``row`` and ``prototype`` are ``(numeric, categorical)`` pairs or
    :class:`Prototype` instances.
    """
    rn, rc = (row.numeric, row.categorical) if isinstance(row, Prototype) else row
    pn, pc = (prototype.numeric, prototype.categorical) if isinstance(prototype, Prototype) else prototype
    rn, pn = np.asarray(rn, dtype=float), np.asarray(pn, dtype=float)
    rc, pc = np.asarray(rc), np.asarray(pc)
    if rn.shape != pn.shape or rc.shape != pc.shape:
        raise ContractError(
            f"layout mismatch: numeric {rn.shape} vs {pn.shape}, categorical {rc.shape} vs {pc.shape}"
        )
    if gamma < 0:
        raise ParameterError("gamma must be nonnegative")
    return float(np.sum((rn - pn) ** 2) + gamma * np.count_nonzero(rc != pc))


def default_gamma(features: FeatureMatrix) -> float:
    if features.numeric.shape[1] == 0:
        return 1.0
    return 0.5 * float(np.mean(features.numeric.var(axis=0)))


@dataclass
class ClusteringResult:
    k: int
    labels: np.ndarray
    prototypes: list[Prototype]
    total_cost: float
    gamma: float
    seed: int
    n_iterations: int
    cost_trace: list[float]
    converged: bool
    reseeded: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self, features: FeatureMatrix | None = None) -> dict:
        num_names = features.numeric_names if features else [f"x{j}" for j in range(len(self.prototypes[0].numeric))]
        cat_names = features.categorical_names if features else [f"c{j}" for j in range(len(self.prototypes[0].categorical))]
        return {
            "k": self.k,
            "gamma": self.gamma,
            "seed": self.seed,
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "total_cost": self.total_cost,
            "cost_trace": list(self.cost_trace),
            "reseeded": [list(x) for x in self.reseeded],
            "prototypes": [
                {
                    "numeric": dict(zip(num_names, map(float, p.numeric))),
                    "categorical": dict(zip(cat_names, map(str, p.categorical))),
                }
                for p in self.prototypes
            ],
            "labels": [int(x) for x in self.labels],
        }

    def to_json(self, path: str | Path, features: FeatureMatrix | None = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(features), fh, indent=2)
            fh.write("\n")


def _encode(categorical: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    # codes follow sorted level names, so the lowest code is the lexicographic minimum
    codes = np.empty(categorical.shape, dtype=np.int64)
    levels = []
    for j in range(categorical.shape[1]):
        lv, inv = np.unique(categorical[:, j], return_inverse=True)
        codes[:, j] = inv
        levels.append(lv)
    return codes, levels


def _cost_matrix(X, C, proto_num, proto_cat, gamma):
    d = ((X[:, None, :] - proto_num[None, :, :]) ** 2).sum(axis=2)
    if C.shape[1]:
        d = d + gamma * (C[:, None, :] != proto_cat[None, :, :]).sum(axis=2)
    return d


def _update(X, C, labels, k, n_levels, proto_num, proto_cat):
    for j in range(k):
        members = labels == j
        if not members.any():
            continue
        proto_num[j] = X[members].mean(axis=0)
        for col in range(C.shape[1]):
            proto_cat[j, col] = int(np.argmax(np.bincount(C[members, col], minlength=n_levels[col])))


def kprototypes(
    features: FeatureMatrix,
    k: int,
    gamma: float | None = None,
    seed: int = 0,
    max_iter: int = 100,
) -> ClusteringResult:
    """Cluster mixed numeric/categorical rows by alternating assignment and update.

    Initial prototypes are ``k`` distinct rows picked uniformly at random. A
    cluster left empty by an assignment is re-seeded with the row farthest
    from its own prototype; every re-seed is listed in ``reseeded`` as
    ``(iteration, cluster)``.
    """
    n = features.n_rows
    if k < 1 or max_iter < 1:
        raise ParameterError("k and max_iter must be at least 1")
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of rows ({n})")
    gamma = default_gamma(features) if gamma is None else float(gamma)
    if gamma < 0:
        raise ParameterError("gamma must be nonnegative")

    X = features.numeric
    C, levels = _encode(features.categorical)
    n_levels = [len(lv) for lv in levels]
    init = _seeding.rng(seed, "kprototypes-init").choice(n, size=k, replace=False)
    proto_num = X[init].copy()
    proto_cat = C[init].copy()

    labels = None
    trace: list[float] = []
    reseeded: list[tuple[int, int]] = []
    converged = False
    it = 0
    rows = np.arange(n)
    for it in range(1, max_iter + 1):
        d = _cost_matrix(X, C, proto_num, proto_cat, gamma)
        new = np.argmin(d, axis=1)
        row_cost = d[rows, new]
        sizes = np.bincount(new, minlength=k)
        for j in np.flatnonzero(sizes == 0):
            donors = sizes[new] > 1
            far = int(np.flatnonzero(donors)[np.argmax(row_cost[donors])])
            sizes[new[far]] -= 1
            sizes[j] += 1
            new[far] = j
            row_cost[far] = 0.0
            proto_num[j] = X[far]
            proto_cat[j] = C[far]
            reseeded.append((it, int(j)))
        trace.append(float(row_cost.sum()))
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        _update(X, C, labels, k, n_levels, proto_num, proto_cat)

    if not converged:
        _update(X, C, labels, k, n_levels, proto_num, proto_cat)
    total = float(_cost_matrix(X, C, proto_num, proto_cat, gamma)[rows, labels].sum())
    if total < trace[-1]:
        trace.append(total)
    prototypes = [
        Prototype(
            numeric=proto_num[j].copy(),
            categorical=np.array([levels[col][proto_cat[j, col]] for col in range(C.shape[1])], dtype=str),
        )
        for j in range(k)
    ]
    return ClusteringResult(
        k=k,
        labels=labels.copy(),
        prototypes=prototypes,
        total_cost=total,
        gamma=gamma,
        seed=int(seed),
        n_iterations=it,
        cost_trace=trace,
        converged=converged,
        reseeded=reseeded,
    )


def knee_point(ks: Sequence[int], costs: Sequence[float]) -> int:
    """k at the largest gap between the falling diagonal and the normalised cost curve.

    Ties go to the smallest k.
    """
    ks = np.asarray(ks, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if ks.size != costs.size:
        raise ContractError("ks and costs differ in length")
    if ks.size < 3:
        raise ParameterError("knee detection needs at least 3 candidate values of k")
    if np.any(np.diff(ks) <= 0):
        raise ParameterError("candidate k values must be strictly ascending")
    x = (ks - ks[0]) / (ks[-1] - ks[0])
    span = costs.max() - costs.min()
    y = (costs - costs.min()) / span if span > 0 else np.zeros_like(costs)
    diff = (1.0 - x) - y
    return int(ks[int(np.argmax(diff))])


def select_k(
    features: FeatureMatrix,
    k_range: Iterable[int] = range(2, 11),
    gamma: float | None = None,
    seed: int = 0,
    max_iter: int = 100,
) -> tuple[int, list[float]]:
    ks = list(k_range)
    if len(ks) < 3:
        raise ParameterError("knee detection needs at least 3 candidate values of k")
    gamma = default_gamma(features) if gamma is None else gamma
    costs = [kprototypes(features, k, gamma, seed, max_iter).total_cost for k in ks]
    return knee_point(ks, costs), costs


LTC_DISPLAY = {
    "pulmonary_disease": "Pulmonary disease",
    "diabetes": "Diabetes",
    "ami": "AMI",
    "chf": "CHF",
    "renal_disease": "Renal disease",
    "cancer": "Cancer",
    "dementia": "Dementia",
    "cva": "CVA",
    "pvd": "PVD",
    "ctd": "CTD",
    "obesity": "Obesity",
    "metastatic_cancer": "Metastatic cancer",
    "paraplegia": "Paraplegia",
    "diabetic_complications": "Diabetic compl.",
    "peptic_ulcer": "Peptic ulcer",
    "sepsis": "Sepsis",
    "liver_disease": "Liver disease",
    "c_diff": "C. diff",
    "severe_liver_disease": "Severe liver disease",
    "mrsa": "MRSA",
    "hiv": "HIV",
}


@dataclass
class ProfileTable:
    """Row-per-characteristic table with one column per cluster plus the population."""

    columns: list[str]
    rows: dict[str, list[float | None]]

    def value(self, row: str, column: str) -> float | None:
        return self.rows[row][self.columns.index(column)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(SCHEMA_HEADER + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["characteristic", *self.columns])
            for name, values in self.rows.items():
                writer.writerow([name, *("NA" if v is None else repr(float(v)) for v in values)])


def _profile(group: list[SpellRecord], total: int, ltc_names: list[str]) -> dict[str, float] | None:
    if not group:
        return None
    los = np.array([s.los for s in group])
    row = {
        "Percentage of spells": 100.0 * len(group) / total,
        "Minimum LOS": float(los.min()),
        "Mean LOS": float(los.mean()),
        "Maximum LOS": float(los.max()),
        "Median COPD adm. in last year": float(np.median([s.copd_admissions_last_year for s in group])),
        "Median no. of LTCs": float(np.median([s.n_ltcs for s in group])),
        "Median no. of ICDs": float(np.median([len(s.icd_codes) for s in group])),
        "Median CCI": float(np.median([s.cci for s in group])),
    }
    for iv in INTERVENTIONS:
        row[f"{iv}, %"] = 100.0 * sum(s.intervention == iv for s in group) / len(group)
    for name in ltc_names:
        row[f"{LTC_DISPLAY.get(name, name)}, %"] = 100.0 * sum(bool(s.ltc_flags.get(name)) for s in group) / len(group)
    return row


def profile_clusters(spells: Sequence[SpellRecord], n_clusters: int | None = None) -> ProfileTable:
    """Per-cluster and population summary in the layout of the cohort profile table.

    Clusters without spells get ``None`` in every row.
    """
    spells = list(spells)
    if any(s.cluster_label is None for s in spells):
        raise ContractError("every spell must carry a cluster label")
    k = n_clusters if n_clusters is not None else (max(s.cluster_label for s in spells) + 1 if spells else 0)
    ltc_names = [n for n in LTC_DISPLAY if any(n in s.ltc_flags for s in spells)]
    ltc_names += sorted({n for s in spells for n in s.ltc_flags} - set(ltc_names))
    total = len(spells)
    groups = [[s for s in spells if s.cluster_label == j] for j in range(k)]
    profiles = [_profile(g, total, ltc_names) for g in groups] + [_profile(spells, total, ltc_names)]
    template = next((p for p in profiles if p is not None), {})
    columns = [f"Cluster {j}" for j in range(k)] + ["Population"]
    rows = {name: [None if p is None else p[name] for p in profiles] for name in template}
    return ProfileTable(columns, rows)


def with_labels(spells: Sequence[SpellRecord], labels: Sequence[int]) -> list[SpellRecord]:
    if len(spells) != len(labels):
        raise ContractError("label count does not match spell count")
    return [replace(s, cluster_label=int(lab)) for s, lab in zip(spells, labels)]


def read_labels(path: str | Path) -> dict[str, int]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return {row["spell_id"]: int(row["cluster_label"]) for row in csv.DictReader(lines)}


def write_labels(spell_ids: Sequence[str], labels: Sequence[int], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["spell_id", "cluster_label"])
        for sid, lab in zip(spell_ids, labels):
            writer.writerow([sid, int(lab)])


def apply_labels(spells: Sequence[SpellRecord], labels: Mapping[str, int]) -> list[SpellRecord]:
    missing = [s.spell_id for s in spells if s.spell_id not in labels]
    if missing:
        raise ContractError(f"{len(missing)} spells have no label, e.g. {missing[0]}")
    return [replace(s, cluster_label=labels[s.spell_id]) for s in spells]
