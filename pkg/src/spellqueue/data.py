"""Spell records: delimited-text I/O, feature engineering and a synthetic generator."""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _seeding
from .errors import ConfigError, RowValidationError, SchemaError

SCHEMA_VERSION = 1
SCHEMA_HEADER = f"# spellqueue-schema: {SCHEMA_VERSION}"

INTERVENTIONS = ("None", "PR", "SN", "Both")
UNMAPPED = "UNMAPPED"
MIN_LOS = -1.0
HISTORY_WINDOW = 365.0

MANDATORY_FIELDS = ("patient_id", "spell_id", "admission_time", "discharge_time")
OPTIONAL_FIELDS = (
    "gender",
    "n_episodes",
    "n_consultants",
    "n_wards",
    "cci",
    "wimd_rank",
    "intervention",
    "icd_codes",
    "copd_admissions_last_year",
    "cluster_label",
)
LTC_PREFIX = "ltc_"
ICD_PREFIX = "icd_"

LTC_NAMES = (
    "pulmonary_disease",
    "diabetes",
    "ami",
    "chf",
    "renal_disease",
    "cancer",
    "dementia",
    "cva",
    "pvd",
    "ctd",
    "obesity",
    "metastatic_cancer",
    "paraplegia",
    "diabetic_complications",
    "peptic_ulcer",
    "sepsis",
    "liver_disease",
    "c_diff",
    "severe_liver_disease",
    "mrsa",
    "hiv",
)


@dataclass(frozen=True)
class SpellRecord:
    patient_id: str
    spell_id: str
    admission_time: float
    discharge_time: float
    gender: str = "U"
    n_episodes: int = 1
    n_consultants: int = 1
    n_wards: int = 1
    cci: int = 0
    ltc_flags: Mapping[str, bool] = field(default_factory=dict)
    wimd_rank: int = 1
    intervention: str = "None"
    icd_codes: tuple[str, ...] = ()
    icd_category_counts: Mapping[str, int] = field(default_factory=dict)
    copd_admissions_last_year: int = 0
    cluster_label: int | None = None

    @property
    def los(self) -> float:
        return self.discharge_time - self.admission_time

    @property
    def n_ltcs(self) -> int:
        return sum(bool(v) for v in self.ltc_flags.values())

    def validate(self) -> None:
        """Raise ``ValueError`` naming the first broken invariant."""
        if not math.isfinite(self.admission_time) or not math.isfinite(self.discharge_time):
            raise ValueError("timestamps must be finite")
        if self.los < MIN_LOS:
            raise ValueError(f"length of stay {self.los} is below {MIN_LOS} days")
        if self.intervention not in INTERVENTIONS:
            raise ValueError(f"intervention {self.intervention!r} not in {INTERVENTIONS}")
        for name in ("n_episodes", "n_consultants", "n_wards", "cci", "copd_admissions_last_year"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.wimd_rank < 1:
            raise ValueError("wimd_rank must be a positive integer")
        if any(v < 0 for v in self.icd_category_counts.values()):
            raise ValueError("ICD category counts must be nonnegative")


@dataclass
class LoadResult:
    records: list[SpellRecord]
    rejected: list[RowValidationError]

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _read_rows(path: Path, delimiter: str):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines, delimiter=delimiter)
    return reader.fieldnames or [], list(reader)


def _parse_int(value: str, default: int) -> int:
    if value is None or value == "":
        return default
    f = float(value)
    if f != int(f):
        raise ValueError(f"expected an integer, got {value!r}")
    return int(f)


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "y", "t"):
        return True
    if v in ("0", "false", "no", "n", "f", ""):
        return False
    raise ValueError(f"expected a boolean flag, got {value!r}")


def load_spells(
    source: str | Path,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> LoadResult:
    """Read spell records from a delimited file with a header row.

    ``schema`` maps record field names to file column names; unmapped fields
    use their own name. Columns prefixed ``ltc_`` and ``icd_`` populate the
    LTC flags and ICD category counts. Invalid rows are collected in
    ``LoadResult.rejected`` (row index is 0-based over data rows).
    """
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"spells file not found: {path}")
    schema = dict(schema or {})
    columns, rows = _read_rows(path, delimiter)
    colmap = {name: schema.get(name, name) for name in MANDATORY_FIELDS + OPTIONAL_FIELDS}
    for name in MANDATORY_FIELDS:
        if colmap[name] not in columns:
            raise SchemaError(name if colmap[name] == name else f"{name} ({colmap[name]})")
    ltc_cols = [c for c in columns if c.startswith(LTC_PREFIX)]
    icd_cols = [c for c in columns if c.startswith(ICD_PREFIX) and c != colmap["icd_codes"]]

    records: list[SpellRecord] = []
    rejected: list[RowValidationError] = []
    for idx, row in enumerate(rows):
        def get(name):
            col = colmap[name]
            return row.get(col) if col in columns else None

        try:
            try:
                admission = float(get("admission_time"))
                discharge = float(get("discharge_time"))
            except (TypeError, ValueError):
                raise ValueError("unparsable timestamp") from None
            codes = get("icd_codes") or ""
            label = get("cluster_label")
            rec = SpellRecord(
                patient_id=str(get("patient_id")),
                spell_id=str(get("spell_id")),
                admission_time=admission,
                discharge_time=discharge,
                gender=get("gender") or "U",
                n_episodes=_parse_int(get("n_episodes"), 1),
                n_consultants=_parse_int(get("n_consultants"), 1),
                n_wards=_parse_int(get("n_wards"), 1),
                cci=_parse_int(get("cci"), 0),
                ltc_flags={c[len(LTC_PREFIX):]: _parse_bool(row[c]) for c in ltc_cols},
                wimd_rank=_parse_int(get("wimd_rank"), 1),
                intervention=get("intervention") or "None",
                icd_codes=tuple(x for x in codes.split(";") if x),
                icd_category_counts={
                    c[len(ICD_PREFIX):]: n for c in icd_cols if (n := _parse_int(row[c], 0))
                },
                copd_admissions_last_year=_parse_int(get("copd_admissions_last_year"), 0),
                cluster_label=None if label in (None, "") else _parse_int(label, 0),
            )
            rec.validate()
        except (ValueError, TypeError) as exc:
            rejected.append(RowValidationError(idx, str(exc)))
            continue
        records.append(rec)
    records.sort(key=lambda r: r.admission_time)
    return LoadResult(records, rejected)


def _fmt(x: float) -> str:
    # repr is the shortest string that round-trips the float exactly
    return repr(float(x))


def write_spells(spells: Sequence[SpellRecord], dest: str | Path, delimiter: str = ",") -> None:
    """Write records with a schema header line and a stable column order."""
    ltc_names = sorted({k for s in spells for k in s.ltc_flags})
    icd_names = sorted({k for s in spells for k in s.icd_category_counts})
    header = [
        "patient_id",
        "spell_id",
        "admission_time",
        "discharge_time",
        "los",
        *OPTIONAL_FIELDS,
        *(LTC_PREFIX + n for n in ltc_names),
        *(ICD_PREFIX + n for n in icd_names),
    ]
    with open(dest, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        for s in spells:
            writer.writerow(
                [
                    s.patient_id,
                    s.spell_id,
                    _fmt(s.admission_time),
                    _fmt(s.discharge_time),
                    _fmt(s.los),
                    s.gender,
                    s.n_episodes,
                    s.n_consultants,
                    s.n_wards,
                    s.cci,
                    s.wimd_rank,
                    s.intervention,
                    ";".join(s.icd_codes),
                    s.copd_admissions_last_year,
                    "" if s.cluster_label is None else s.cluster_label,
                    *(int(bool(s.ltc_flags.get(n, False))) for n in ltc_names),
                    *(s.icd_category_counts.get(n, 0) for n in icd_names),
                ]
            )


def engineer_features(
    spells: Iterable[SpellRecord],
    icd_map: Mapping[str, str] | None = None,
) -> list[SpellRecord]:
    """Attach the twelve-month admission count and, if ``icd_map`` is given, ICD category counts.

    The count for a spell is the number of the same patient's earlier spells
    admitted within the preceding 365 days; the spell itself is excluded.
    Codes missing from ``icd_map`` are counted under ``UNMAPPED``.
    Output order matches input order.
    """
    spells = list(spells)
    by_patient: dict[str, list[int]] = defaultdict(list)
    for idx, s in enumerate(spells):
        by_patient[s.patient_id].append(idx)

    counts = [0] * len(spells)
    for indices in by_patient.values():
        indices.sort(key=lambda i: (spells[i].admission_time, spells[i].spell_id))
        times = [spells[i].admission_time for i in indices]
        for pos, i in enumerate(indices):
            t = times[pos]
            # earlier spells in (t - 365, t]
            first = bisect_right(times, t - HISTORY_WINDOW, 0, pos)
            counts[i] = pos - first

    out = []
    for s, n_recent in zip(spells, counts):
        changes = {"copd_admissions_last_year": n_recent}
        if icd_map is not None:
            cats = Counter(icd_map.get(code, UNMAPPED) for code in s.icd_codes)
            changes["icd_category_counts"] = dict(sorted(cats.items()))
        out.append(replace(s, **changes))
    return out


# Population profile of the four clusters reported for the COPD cohort.
COHORT_PERCENT_SPELLS = (9.91, 19.27, 69.39, 1.44)
# the listed shares total 100.01% after rounding
COHORT_WEIGHTS = tuple(x / sum(COHORT_PERCENT_SPELLS) for x in COHORT_PERCENT_SPELLS)
COHORT_MEAN_LOS = (25.30, 6.46, 4.11, 75.36)
# 10,861 spells between February 2011 and March 2019 (2,980 days)
OBSERVED_SPELLS = 10861
OBSERVED_PATIENTS = 5231
OBSERVED_SPAN_DAYS = 2980.0
TOTAL_ARRIVAL_RATE = OBSERVED_SPELLS / OBSERVED_SPAN_DAYS

COHORT_INTERVENTION = (
    (80.20, 15.80, 3.81, 0.19),
    (83.42, 13.43, 2.87, 0.29),
    (65.76, 27.97, 4.63, 1.63),
    (89.74, 8.97, 1.28, 0.00),
)
COHORT_LTC_PREVALENCE = {
    "pulmonary_disease": (100.00, 100.00, 100.00, 100.00),
    "diabetes": (19.05, 28.14, 14.84, 25.00),
    "ami": (13.85, 22.93, 8.76, 16.03),
    "chf": (12.45, 53.85, 0.00, 26.28),
    "renal_disease": (7.53, 19.54, 1.92, 17.95),
    "cancer": (7.62, 12.23, 2.93, 10.90),
    "dementia": (6.88, 21.26, 0.00, 26.92),
    "cva": (8.64, 13.33, 0.70, 19.87),
    "pvd": (4.37, 7.69, 2.27, 5.77),
    "ctd": (5.11, 4.25, 3.11, 4.49),
    "obesity": (2.51, 3.01, 1.49, 7.69),
    "metastatic_cancer": (1.58, 4.49, 0.00, 0.64),
    "paraplegia": (1.30, 3.73, 0.24, 0.64),
    "diabetic_complications": (0.19, 0.86, 0.48, 1.92),
    "peptic_ulcer": (1.58, 0.81, 0.23, 1.28),
    "sepsis": (1.77, 0.91, 0.15, 1.92),
    "liver_disease": (0.28, 0.48, 0.23, 0.00),
    "c_diff": (0.74, 0.10, 0.01, 0.64),
    "severe_liver_disease": (0.19, 0.43, 0.00, 0.00),
    "mrsa": (0.28, 0.05, 0.03, 1.28),
    "hiv": (0.00, 0.00, 0.03, 0.00),
}
COHORT_MEDIAN_CCI = (9, 20, 4, 18)
COHORT_MEDIAN_ICDS = (9, 8, 5, 11)
COHORT_MEDIAN_RECENT_ADMISSIONS = (2, 1, 1, 2)

ICD_CHAPTERS = (
    "infectious", "neoplasms", "blood", "endocrine", "mental", "nervous", "eye", "ear",
    "circulatory", "respiratory", "digestive", "skin", "musculoskeletal", "genitourinary",
    "pregnancy", "perinatal", "congenital", "symptoms", "injury", "external", "health_status",
)
_CHAPTER_LETTERS = "ACDEFGHHIJKLMNOPQRSVZ"
# 21 categories, five synthetic codes each
SYNTHETIC_ICD_MAP = {
    f"{letter}{idx}{j}": chapter
    for idx, (letter, chapter) in enumerate(zip(_CHAPTER_LETTERS, ICD_CHAPTERS))
    for j in range(5)
}
COPD_CODE = "J" + str(ICD_CHAPTERS.index("respiratory")) + "0"
N_WIMD_AREAS = 1909


@dataclass(frozen=True)
class ClusterProfile:
    """Categorical and count characteristics of one synthetic cluster."""

    intervention_pct: tuple[float, float, float, float]
    ltc_prevalence_pct: Mapping[str, float]
    mean_cci: float
    mean_icds: float
    mean_extra_episodes: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ltc_prevalence_pct"] = dict(self.ltc_prevalence_pct)
        return d


_EXTRA_EPISODES = (1.5, 0.6, 0.3, 3.0)


def cohort_profiles() -> tuple[ClusterProfile, ...]:
    return tuple(
        ClusterProfile(
            intervention_pct=COHORT_INTERVENTION[i],
            ltc_prevalence_pct={name: pct[i] for name, pct in COHORT_LTC_PREVALENCE.items()},
            mean_cci=float(COHORT_MEDIAN_CCI[i]),
            mean_icds=float(COHORT_MEDIAN_ICDS[i]),
            mean_extra_episodes=_EXTRA_EPISODES[i],
        )
        for i in range(4)
    )


def _default_interarrival() -> tuple[float, ...]:
    return tuple(1.0 / (w * TOTAL_ARRIVAL_RATE) for w in COHORT_WEIGHTS)


@dataclass(frozen=True)
class SyntheticConfig:
    n_spells: int = OBSERVED_SPELLS
    cluster_weights: tuple[float, ...] = COHORT_WEIGHTS
    mean_los: tuple[float, ...] = COHORT_MEAN_LOS
    mean_interarrival: tuple[float, ...] = field(default_factory=_default_interarrival)
    profiles: tuple[ClusterProfile, ...] = field(default_factory=cohort_profiles)
    n_patients: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("cluster_weights", "mean_los", "mean_interarrival"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        k = len(self.cluster_weights)
        if int(self.n_spells) != self.n_spells or self.n_spells < 0:
            raise ConfigError(f"n_spells must be a nonnegative integer, got {self.n_spells}")
        if k == 0:
            raise ConfigError("at least one cluster is required")
        if any(w < 0 for w in self.cluster_weights) or abs(sum(self.cluster_weights) - 1.0) > 1e-12:
            raise ConfigError(f"cluster_weights must be >= 0 and sum to 1, got {self.cluster_weights}")
        for name in ("mean_los", "mean_interarrival"):
            values = getattr(self, name)
            if len(values) != k:
                raise ConfigError(f"{name} needs {k} entries, got {len(values)}")
            if any(not (v > 0) for v in values):
                raise ConfigError(f"{name} must be positive, got {values}")
        if len(self.profiles) != k:
            raise ConfigError(f"profiles needs {k} entries, got {len(self.profiles)}")
        if self.n_patients is not None and self.n_patients < 1:
            raise ConfigError("n_patients must be positive")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def patients(self) -> int:
        if self.n_patients is not None:
            return int(self.n_patients)
        return max(1, round(self.n_spells * OBSERVED_PATIENTS / OBSERVED_SPELLS))

    def to_dict(self) -> dict:
        return {
            "n_spells": self.n_spells,
            "cluster_weights": list(self.cluster_weights),
            "mean_los": list(self.mean_los),
            "mean_interarrival": list(self.mean_interarrival),
            "profiles": [p.to_dict() for p in self.profiles],
            "n_patients": self.n_patients,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticConfig":
        known = {"n_spells", "cluster_weights", "mean_los", "mean_interarrival", "profiles", "n_patients", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "profiles" in kwargs:
            try:
                kwargs["profiles"] = tuple(
                    ClusterProfile(
                        intervention_pct=tuple(p["intervention_pct"]),
                        ltc_prevalence_pct=dict(p["ltc_prevalence_pct"]),
                        mean_cci=float(p["mean_cci"]),
                        mean_icds=float(p["mean_icds"]),
                        mean_extra_episodes=float(p["mean_extra_episodes"]),
                    )
                    for p in kwargs["profiles"]
                )
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"malformed cluster profile: {exc}") from None
        elif "cluster_weights" in kwargs and len(kwargs["cluster_weights"]) != 4:
            raise ConfigError("profiles must be given when the cluster count differs from 4")
        if "mean_interarrival" not in kwargs and "cluster_weights" in kwargs:
            kwargs["mean_interarrival"] = tuple(
                1.0 / (w * TOTAL_ARRIVAL_RATE) if w > 0 else 1.0 for w in kwargs["cluster_weights"]
            )
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def generate_synthetic(config: SyntheticConfig) -> list[SpellRecord]:
    """Seeded synthetic spells mimicking the cluster profile of the COPD cohort.

    Each spell's planted cluster is drawn from ``cluster_weights`` and kept in
    ``cluster_label``. Within a cluster, admissions follow a Poisson process
    with the configured mean inter-arrival time; LOS is exponential with the
    cluster mean, clamped at zero. Records come back in admission order with
    engineered features attached.
    """
    n = int(config.n_spells)
    if n == 0:
        return []
    seed = int(config.seed)
    k = len(config.cluster_weights)
    labels = _seeding.rng(seed, "labels").choice(k, size=n, p=np.asarray(config.cluster_weights))

    admission = np.empty(n)
    los = np.empty(n)
    for i in range(k):
        members = np.flatnonzero(labels == i)
        gaps = _seeding.rng(seed, "arrivals", i).standard_exponential(members.size) * config.mean_interarrival[i]
        admission[members] = np.cumsum(gaps)
        los[members] = np.maximum(0.0, _seeding.rng(seed, "los", i).standard_exponential(members.size) * config.mean_los[i])

    order = np.lexsort((labels, admission))
    labels, admission, los = labels[order], admission[order], los[order]

    gen = _seeding.rng(seed, "attributes")
    profiles = config.profiles
    pct = np.array([p.intervention_pct for p in profiles], dtype=float)
    cum = np.cumsum(pct / pct.sum(axis=1, keepdims=True), axis=1)
    intervention = np.minimum((gen.random(n)[:, None] > cum[labels]).sum(axis=1), 3)

    ltc_names = list(dict.fromkeys(name for p in profiles for name in p.ltc_prevalence_pct))
    prevalence = np.array([[p.ltc_prevalence_pct.get(name, 0.0) for name in ltc_names] for p in profiles])
    flags = gen.random((n, len(ltc_names))) * 100.0 < prevalence[labels]

    attr = lambda name: np.array([getattr(p, name) for p in profiles], dtype=float)[labels]
    n_icds = 1 + gen.poisson(np.maximum(attr("mean_icds") - 1.0, 0.0))
    codes = np.array(sorted(SYNTHETIC_ICD_MAP))
    code_draws = codes[gen.integers(0, codes.size, size=int(n_icds.sum() - n))]
    code_split = np.cumsum(n_icds - 1)[:-1]
    episodes = 1 + gen.poisson(attr("mean_extra_episodes"))
    consultants = 1 + gen.binomial(episodes - 1, 0.7)
    wards = 1 + gen.binomial(episodes - 1, 0.5)
    cci = gen.poisson(attr("mean_cci"))
    wimd = 1 + gen.integers(0, N_WIMD_AREAS, size=n)
    gender = np.where(gen.random(n) < 0.5, "F", "M")
    patients = gen.integers(0, config.patients, size=n)

    width = len(str(n))
    pwidth = len(str(config.patients))
    spells = [
        SpellRecord(
            patient_id=f"P{int(patients[r]):0{pwidth}d}",
            spell_id=f"S{r:0{width}d}",
            admission_time=float(admission[r]),
            discharge_time=float(admission[r] + los[r]),
            gender=str(gender[r]),
            n_episodes=int(episodes[r]),
            n_consultants=int(consultants[r]),
            n_wards=int(wards[r]),
            cci=int(cci[r]),
            ltc_flags=dict(zip(ltc_names, flags[r].tolist())),
            wimd_rank=int(wimd[r]),
            intervention=INTERVENTIONS[int(intervention[r])],
            icd_codes=(COPD_CODE, *extra.tolist()),
            cluster_label=int(labels[r]),
        )
        for r, extra in enumerate(np.split(code_draws, code_split))
    ]
    return engineer_features(spells, SYNTHETIC_ICD_MAP)


def planted_mixed_blobs(
    n: int,
    k: int,
    separation: float = 5.0,
    n_numeric: int = 3,
    n_categorical: int = 3,
    n_levels: int = 4,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mixed-type data with known cluster membership.

    Numeric centres sit ``separation`` standard deviations apart along a
    simplex-like layout; each categorical column takes a cluster-specific
    level 90% of the time. Returns ``(numeric, categorical, labels)``.
    """
    gen = _seeding.rng(seed, "planted")
    labels = np.sort(gen.integers(0, k, size=n))
    centres = np.zeros((k, n_numeric))
    for j in range(k):
        centres[j, j % n_numeric] = separation * (1 + j // n_numeric)
    numeric = centres[labels] + gen.standard_normal((n, n_numeric))
    home = np.arange(k)[:, None] % n_levels + np.zeros((1, n_categorical), dtype=int)
    noisy = gen.random((n, n_categorical)) < 0.1
    categorical = np.where(noisy, gen.integers(0, n_levels, size=(n, n_categorical)), home[labels])
    categorical = np.char.add("L", categorical.astype(str))
    return numeric, categorical, labels
